"""Class lexicon files: names, prompt templates, per-class knowledge records.

JSON layout:
    {
      "class_names": ["cat", ...],
      "templates": ["a photo of a {}."],
      "knowledge": {
        "cat": {"wn_path": "...", "wn_def": "...", "wiki_def": "...",
                 "gpt3": ["...", up to 5]}
      }
    }

Knowledge records are data, never fetched live; populate_gpt3 can fill the
gpt3 lists through a caller-supplied generator callable with a disk cache.
"""
import dataclasses
import json
import os

# the default template is a documented placeholder, not a tuned prompt set
DEFAULT_TEMPLATES = ["a photo of a {}."]

KNOWLEDGE_SOURCES = ("wn_path", "wn_def", "wiki_def")
MAX_GPT3 = 5


class LexiconError(Exception):
    pass


@dataclasses.dataclass
class ClassKnowledge:
    wn_path: str = None
    wn_def: str = None
    wiki_def: str = None
    gpt3: list = dataclasses.field(default_factory=list)


@dataclasses.dataclass
class LexiconFile:
    class_names: list
    templates: list
    knowledge: dict  # class name -> ClassKnowledge

    def for_class(self, name):
        return self.knowledge.get(name, ClassKnowledge())


def load_lexicon(path):
    with open(path, encoding="utf-8") as f:
        raw = json.load(f)
    return parse_lexicon(raw)


def parse_lexicon(raw):
    names = raw.get("class_names")
    if not names or len(set(names)) != len(names):
        raise LexiconError("class_names must be a non-empty unique list")
    templates = raw.get("templates", DEFAULT_TEMPLATES)
    if not templates:
        raise LexiconError("templates must be non-empty")
    for t in templates:
        if "{}" not in t:
            raise LexiconError(f"template {t!r} lacks the {{}} placeholder")
    knowledge = {}
    for name, rec in (raw.get("knowledge") or {}).items():
        if name not in names:
            raise LexiconError(f"knowledge for unknown class {name!r}")
        gpt3 = list(rec.get("gpt3") or [])
        if len(gpt3) > MAX_GPT3:
            raise LexiconError(f"class {name!r} has {len(gpt3)} gpt3 records; "
                               f"at most {MAX_GPT3} allowed")
        knowledge[name] = ClassKnowledge(
            wn_path=rec.get("wn_path"), wn_def=rec.get("wn_def"),
            wiki_def=rec.get("wiki_def"), gpt3=gpt3)
    return LexiconFile(class_names=list(names), templates=list(templates),
                       knowledge=knowledge)


def save_lexicon(lexicon, path):
    raw = {"class_names": lexicon.class_names, "templates": lexicon.templates,
           "knowledge": {n: dataclasses.asdict(k)
                         for n, k in lexicon.knowledge.items()}}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(raw, f, indent=2, ensure_ascii=False, sort_keys=True)
        f.write("\n")


def render_variants(lexicon):
    """Flatten the lexicon into (descriptor, text) pairs, engine ordering.

    Per class: one plain variant per template, then one variant per present
    knowledge source and gpt3 record (rendered with template 0, knowledge text
    concatenated after the prompt). Descriptors use the archive schema.
    """
    variants = []
    for class_id, name in enumerate(lexicon.class_names):
        for template_id, template in enumerate(lexicon.templates):
            variants.append(({"variant_id": len(variants), "class_id": class_id,
                              "template_id": template_id, "source": "none",
                              "knowledge_index": 0},
                             template.format(name)))
        base = lexicon.templates[0].format(name)
        rec = lexicon.for_class(name)
        for source in KNOWLEDGE_SOURCES:
            text = getattr(rec, source)
            if text:
                variants.append(({"variant_id": len(variants),
                                  "class_id": class_id, "template_id": 0,
                                  "source": source, "knowledge_index": 0},
                                 f"{base} {text}"))
        for ki, text in enumerate(rec.gpt3[:MAX_GPT3]):
            variants.append(({"variant_id": len(variants), "class_id": class_id,
                              "template_id": 0, "source": "gpt3",
                              "knowledge_index": ki},
                             f"{base} {text}"))
    return variants


def populate_gpt3(lexicon, generator, cache_path, per_class=MAX_GPT3):
    """Fill missing gpt3 records via `generator(class_name, index) -> str`.

    Generated strings are cached in a JSON file so repeat runs never re-invoke
    the generator. The lexicon is modified in place and returned.
    """
    cache = {}
    if os.path.isfile(cache_path):
        with open(cache_path, encoding="utf-8") as f:
            cache = json.load(f)
    dirty = False
    for name in lexicon.class_names:
        rec = lexicon.knowledge.setdefault(name, ClassKnowledge())
        have = list(rec.gpt3)
        while len(have) < min(per_class, MAX_GPT3):
            key = f"{name}#{len(have)}"
            if key not in cache:
                cache[key] = str(generator(name, len(have)))
                dirty = True
            have.append(cache[key])
        rec.gpt3 = have
    if dirty:
        with open(cache_path, "w", encoding="utf-8") as f:
            json.dump(cache, f, indent=2, ensure_ascii=False, sort_keys=True)
    return lexicon
