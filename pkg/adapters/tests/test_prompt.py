import json

import pytest

from visprobe_adapters import prompt


@pytest.fixture()
def five_shot_template(tmp_path):
    exemplars = [
        {
            "image_ref": f"exemplar_{i}.png",
            "task": task,
            "objects": objs,
            "backgrounds": bgs,
        }
        for i, (task, objs, bgs) in enumerate(
            [
                ("put strawberry in the bowl", ["hot dog", "broccoli"],
                 ["white counter", "wall", "stovetop", "black sink"]),
                ("move the pan left", ["sponge", "lid"], ["wall", "counter"]),
                ("close the drawer", ["banana"], ["floor", "cabinet"]),
                ("stack the cups", ["fork", "plate"], ["table", "wall"]),
                ("pick up the tomato", ["pizza", "olive oil", "lid"],
                 ["wall", "counter", "stove", "sink"]),
            ]
        )
    ]
    d = prompt.Template.default()
    path = tmp_path / "template.json"
    path.write_text(
        json.dumps(
            {
                "version": "prompt/1",
                "preamble": d.preamble,
                "exemplars": exemplars,
                "query_format": d.query_format,
            }
        )
    )
    return prompt.Template.load(path)


def test_renders_five_exemplar_slots_and_both_list_names(five_shot_template):
    parts = prompt.render_messages(
        five_shot_template, "place the carrot on yellow plate", b"\x89PNG-fake"
    )
    text = prompt.flat_text(parts)
    for i in range(1, 6):
        assert "{IMAGE_%d}" % i in text
        assert f"Example {i}." in text
    assert "'not_relevant_objects'" in text
    assert "'not_relevant_backgrounds'" in text
    assert "place the carrot on yellow plate" in text
    # one image part per exemplar placeholder is textual here (no loader),
    # plus exactly one real image part for the query observation
    image_parts = [p for p in parts if p["type"] == "image_url"]
    assert len(image_parts) == 1
    assert image_parts[0]["image_url"]["url"].startswith("data:image/png;base64,")


def test_exemplar_loader_inlines_images(five_shot_template):
    parts = prompt.render_messages(
        five_shot_template, "task", b"querypng", exemplar_loader=lambda ref: b"png:" + ref.encode()
    )
    image_parts = [p for p in parts if p["type"] == "image_url"]
    # five exemplars plus the query image
    assert len(image_parts) == 6


def test_parse_reply_variants():
    objects, backgrounds = prompt.parse_reply("['cup', 'orange']\n['wall']")
    assert objects == ["cup", "orange"]
    assert backgrounds == ["wall"]
    objects, backgrounds = prompt.parse_reply(
        '{"not_relevant_objects": ["cup"], "not_relevant_backgrounds": []}'
    )
    assert objects == ["cup"]
    assert backgrounds == []
    with pytest.raises(ValueError):
        prompt.parse_reply("no lists here at all")
