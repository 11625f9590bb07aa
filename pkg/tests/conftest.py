"""Shared fixtures: a small exam article file and synthetic corpora."""

import json

import pytest

STORY = (
    "My aunt was not a sailor, she kept the old lighthouse at Port Ellen, "
    "a stone tower on the northern cliffs. In 1950, the council sold the tower "
    "to a shipping family, the Harlans, who traded in fine wool. Twenty years "
    "later the family offered it for just EUR30,000, but nobody wanted it. "
    "I met Harlan at a market and he asked if I would buy the tower. "
    "I said yes, though I was only an art teacher with no savings. "
    "So I sold my boat, borrowed from friends and bought it. "
    "Visitors can climb the tower every day because entry is free for everyone."
)

STORY_DOC = {
    "article": STORY,
    "questions": [
        "Which statement of the following is true?",
        "How did the author get the tower?",
    ],
    "options": [
        [
            "The aunt made her living by sailing.",
            "The author's friends refused to help.",
            "The tower was built in 1950.",
            "People can visit the tower free of charge.",
        ],
        [
            "It was a present from Harlan.",
            "The council sold it to him.",
            "He bought it from the family.",
            "He inherited it from his aunt.",
        ],
    ],
    "answers": ["D", "C"],
    "id": "lighthouse-1",
}


def write_story(path, doc=None):
    path.write_text(json.dumps(doc or STORY_DOC), encoding="utf-8")
    return path


@pytest.fixture
def story_file(tmp_path):
    return write_story(tmp_path / "lighthouse-1.txt")
