"""Regenerates the JSONL/JSON fixtures in this directory. Deterministic."""
import json

EVENTS = [
    ("Angela Merkel", "Stuttgart", "tours a battery plant in"),
    ("Marco Rubio", "Minneapolis", "speaks to supporters in"),
    ("Jacinda Ardern", "Christchurch", "lays flowers at a memorial in"),
    ("Lionel Messi", "Barcelona", "trains with teammates in"),
    ("Greta Thunberg", "Davos", "addresses a climate rally in"),
    ("Emmanuel Macron", "Marseille", "visits a hospital ward in"),
    ("Serena Williams", "Melbourne", "celebrates a win in"),
    ("Narendra Modi", "Varanasi", "opens a new bridge in"),
    ("Justin Trudeau", "Halifax", "meets fishing crews in"),
    ("Cyril Ramaphosa", "Soweto", "greets residents in"),
]
CATS = ["text_image", "person", "scene", "text_text"]


def visual(i, label, k, conf=0.9):
    return {
        "entity_id": f"v{k}",
        "class_label": label,
        "region": {"x": 10.0 * k, "y": 5.0, "w": 40.0, "h": 60.0},
        "crop_ref": f"crops/{i}_{k}.jpg",
        "confidence": conf,
    }


def item(i, person, place, verb, label, image_event):
    caption = f"{person} {verb} {place} on Tuesday."
    img_person, img_place, _ = EVENTS[image_event]
    return {
        "id": f"n{i:02d}",
        "image_ref": f"images/n{i:02d}.jpg",
        "caption": caption,
        "label": label,
        "category": CATS[i % 4],
        "pre_extracted": {
            "visual_entities": [
                visual(i, img_person, 0),
                visual(i, img_place, 1),
                visual(i, "crowd", 2, 0.6),
            ]
        },
    }


def corpus20():
    rows = []
    for i in range(20):
        ev = i % 10
        falsified = i >= 10
        image_event = (ev + 3) % 10 if falsified else ev
        p, pl, verb = EVENTS[ev]
        rows.append(item(i, p, pl, verb, "falsified" if falsified else "pristine", image_event))
    return rows


def script20(rows):
    s = {"retrieval": {}, "detective": {}, "analyst": {}}
    for r in rows:
        sid = r["id"]
        faked = r["label"] == "falsified"
        if faked:
            s["retrieval"][sid] = "Evidence reviewed.\nFLAGS:\n- person in image differs from the caption"
            s["detective"][sid] = (
                "ELEMENT time: unknown - no date visible\n"
                "ELEMENT place: consistent - setting plausible\n"
                "ELEMENT person: contradicted - different public figure shown\n"
                "ELEMENT event: unknown - not determinable\n"
                "ELEMENT object: consistent - nothing unusual"
            )
            s["analyst"][sid] = f"The person shown does not match the caption of {sid}.\nVERDICT: OOC"
        else:
            s["retrieval"][sid] = "Evidence reviewed.\nFLAGS:"
            s["detective"][sid] = (
                "ELEMENT time: unknown - no date visible\n"
                "ELEMENT place: consistent - matches evidence\n"
                "ELEMENT person: consistent - same figure\n"
                "ELEMENT event: consistent - matches evidence\n"
                "ELEMENT object: consistent - nothing unusual"
            )
            s["analyst"][sid] = f"Image and caption of {sid} agree with the retrieved coverage.\nVERDICT: PRISTINE"
    return s


CASE_CAPTION = (
    "People cheer and take pictures as the pope arrives to meet with representatives "
    "of the World of Work organization in Ciudad Juarez."
)


def juarez():
    rows = [
        {
            "id": "juarez",
            "image_ref": "images/juarez.jpg",
            "caption": CASE_CAPTION,
            "label": "falsified",
            "category": "scene",
            "pre_extracted": {
                "visual_entities": [
                    visual(0, "crowd", 0, 0.8),
                    visual(0, "camera", 1, 0.7),
                    visual(0, "World of Work", 2, 0.55),
                ]
            },
        }
    ]
    others = [
        ("farm", "Farmers harvest wheat near Saskatoon after a dry summer."),
        ("bridge", "Engineers inspect a rusting rail bridge outside Glasgow."),
        ("market", "Vendors sell spices at a night market in Marrakesh."),
        ("regatta", "Rowers compete during a regatta on the Thames."),
    ]
    for k, (name, cap) in enumerate(others):
        rows.append({
            "id": f"db-{name}",
            "image_ref": f"images/{name}.jpg",
            "caption": cap,
            "label": "pristine",
            "category": CATS[k % 4],
            "pre_extracted": {"visual_entities": [visual(k + 1, cap.split()[-1].rstrip("."), 0)]},
        })
    script = {
        "retrieval": {
            "juarez": (
                "The retrieved coverage describes the pope greeting members of the World of Work "
                "organization in Ciudad Juarez, but the image itself offers no matching cues.\n"
                "FLAGS:\n"
                "- geographic context: nothing in the image places the scene in Ciudad Juarez\n"
                "- person: the pope and the organization representatives are not visible"
            )
        },
        "detective": {
            "juarez": (
                "ELEMENT time: unknown - no visible date\n"
                "ELEMENT place: contradicted - geographic context of Ciudad Juarez is absent from the image\n"
                "ELEMENT person: contradicted - the individuals named in the caption do not appear\n"
                "ELEMENT event: unknown - a crowd alone does not establish the visit\n"
                "ELEMENT object: unknown - nothing decisive"
            )
        },
        "analyst": {
            "juarez": (
                "The caption claims a specific geographic context, a visit to Ciudad Juarez, and names "
                "individuals and locations that do not appear in the image. The photo shows a generic crowd "
                "with cameras, so the caption is not supported by the picture.\n"
                "VERDICT: OOC"
            )
        },
    }
    return rows, script


def dump_jsonl(path, rows):
    with open(path, "w") as f:
        for r in rows:
            f.write(json.dumps(r, sort_keys=True) + "\n")


def dump_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


if __name__ == "__main__":
    rows = corpus20()
    dump_jsonl("corpus_20.jsonl", rows)
    dump_json("script_20.json", script20(rows))
    jrows, jscript = juarez()
    dump_jsonl("juarez_corpus.jsonl", jrows)
    dump_json("juarez_script.json", jscript)
