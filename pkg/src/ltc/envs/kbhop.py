"""Two-hop question answering over a local fact store (HotpotQA analog)."""
from __future__ import annotations

from collections import deque

from .base import NOTHING_HAPPENS, Environment

ENTITIES = (
    "alba", "bron", "cyra", "dax", "elm", "fenn", "gale", "hask", "ilo", "jura",
    "kess", "lorn", "mira", "nox", "orin", "pell", "quin", "rusk", "sable", "tarn",
    "ubo", "vex", "wren", "yara", "zell", "arlo", "bex", "cato", "dune", "eris",
)
RELATIONS = ("father", "mother", "boss", "friend", "teacher", "rival")
MAX_FACTS_PER_SUBJECT = 3

GRAMMAR = (
    ("question", "what", "of", "?", "search", "finish", "[", "]", "no", "facts",
     "found", "correct", "wrong", "find", "answer", "is")
    + ENTITIES
    + RELATIONS
)


class KBHop(Environment):
    """Answer ``what is <rel2> of <rel1> of <entity> ?`` with search/finish.

    The fact store is functional (one object per subject/relation pair) and
    the answer never appears among the facts about the question entity, so
    it takes exactly two searches to reach it.
    """

    kind = "kbhop"
    max_obs_tokens = 4 * MAX_FACTS_PER_SUBJECT

    def __init__(self, seed: int, max_steps: int = 20, kb_size: int = 12):
        if kb_size < 2:
            raise ValueError("kb_size must be at least 2")
        self.kb_size = kb_size
        super().__init__(seed, max_steps)

    def _setup(self) -> str:
        rng = self.rng
        e0, mid, ans = (ENTITIES[i] for i in rng.choice(len(ENTITIES), 3, replace=False))
        r1, r2 = (RELATIONS[i] for i in rng.choice(len(RELATIONS), 2, replace=False))
        self.entity, self.bridge, self.answer = e0, mid, ans
        self.rel1, self.rel2 = r1, r2
        facts = {(e0, r1): mid, (mid, r2): ans}
        per_subject = {e0: 1, mid: 1}
        attempts = 0
        while len(facts) < self.kb_size and attempts < 10_000:
            attempts += 1
            s, o = (ENTITIES[i] for i in rng.choice(len(ENTITIES), 2, replace=False))
            r = RELATIONS[int(rng.integers(len(RELATIONS)))]
            if (s, r) in facts or per_subject.get(s, 0) >= MAX_FACTS_PER_SUBJECT:
                continue
            if s == e0 and o == ans:
                continue
            facts[(s, r)] = o
            per_subject[s] = per_subject.get(s, 0) + 1
        self.facts = facts
        self.searched: list[str] = []
        return f"question : what is {r2} of {r1} of {e0} ?"

    def lookup(self, entity: str) -> list[tuple[str, str, str]]:
        return [(s, r, o) for (s, r), o in self.facts.items() if s == entity]

    def _apply(self, words):
        match words:
            case ["search", "[", entity, "]"]:
                self.searched.append(entity)
                found = self.lookup(entity)
                if not found:
                    return "no facts found .", 0
                return " ".join(f"{s} {r} {o} ." for s, r, o in found), 0
            case ["finish", "[", answer, "]"]:
                if answer == self.answer:
                    return "correct .", 1
                return "wrong .", -1
        return NOTHING_HAPPENS, 0

    def expert_action(self) -> str:
        if self.entity not in self.searched:
            return f"search [ {self.entity} ]"
        if self.bridge not in self.searched:
            return f"search [ {self.bridge} ]"
        return f"finish [ {self.answer} ]"

    def expert_thought(self) -> str:
        if self.entity not in self.searched:
            return f"find {self.rel1} of {self.entity}"
        if self.bridge not in self.searched:
            return f"find {self.rel2} of {self.bridge}"
        return f"answer is {self.answer}"

    def search_distance(self) -> int:
        """Breadth-first count of searches before the answer shows up in an observation."""
        frontier = deque([(self.entity, 1)])
        seen = {self.entity}
        while frontier:
            entity, depth = frontier.popleft()
            for _, _, o in self.lookup(entity):
                if o == self.answer:
                    return depth
                if o not in seen:
                    seen.add(o)
                    frontier.append((o, depth + 1))
        return -1
