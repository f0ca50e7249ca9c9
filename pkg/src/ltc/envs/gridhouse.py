"""Household pick-and-place task in the style of ALFWorld."""
from __future__ import annotations

from .base import NOTHING_HAPPENS, Environment

CONTAINERS = ("drawer", "cabinet", "fridge", "safe")
SURFACES = ("table", "shelf", "desk", "counter")
LOCATIONS = CONTAINERS + SURFACES
OBJECTS = ("mug", "apple", "book", "key", "pen", "plate", "cup", "bowl", "spoon", "phone")

GRAMMAR = (
    ("task", ":", "put", "in", "and", "is", ".", "you", "see", "go", "to", "open",
     "take", "look", "nothing", "happens", "closed", "complete", "are", "at", "hold",
     "room", "i", "will", "out", "of", "steps")
    + LOCATIONS
    + OBJECTS
)


class GridHouse(Environment):
    """Four locations, 3-5 objects, task ``put <obj> in <loc>``.

    Containers start closed and must be opened before anything can be taken
    from or put into them. The task text names where the target object is,
    so the shortest plan is fully determined by the first observation.
    """

    kind = "gridhouse"
    max_obs_tokens = 12

    def __init__(self, seed: int, max_steps: int = 20, two_objects: bool = False):
        self.two_objects = two_objects
        super().__init__(seed, max_steps)

    def _setup(self) -> str:
        rng = self.rng
        self.locations = [LOCATIONS[i] for i in rng.choice(len(LOCATIONS), 4, replace=False)]
        n_obj = int(rng.integers(3, 6))
        self.objects = [OBJECTS[i] for i in rng.choice(len(OBJECTS), n_obj, replace=False)]
        self.place = {o: self.locations[int(rng.integers(4))] for o in self.objects}
        self.opened = {loc for loc in self.locations if loc in SURFACES}
        self.at: str | None = None
        self.holding: str | None = None
        n_targets = 2 if self.two_objects else 1
        self.targets = list(self.objects[:n_targets])
        sources = {self.place[o] for o in self.targets}
        choices = [loc for loc in self.locations if loc not in sources]
        self.goal = choices[int(rng.integers(len(choices)))]
        what = " and ".join(self.targets)
        where = " ".join(f"{o} is in {self.place[o]} ." for o in self.targets)
        return f"task : put {what} in {self.goal} . {where} you see {' '.join(self.locations)} ."

    def _contents(self, loc: str) -> str:
        here = [o for o in self.objects if self.place.get(o) == loc]
        return "you see " + (" ".join(here) if here else "nothing") + " ."

    def _solved(self) -> bool:
        return all(self.place.get(o) == self.goal for o in self.targets)

    def _apply(self, words):
        match words:
            case ["go", "to", loc] if loc in self.locations:
                self.at = loc
                if loc not in self.opened:
                    return f"{loc} is closed .", 0
                return self._contents(loc), 0
            case ["open", loc] if loc == self.at and loc not in self.opened:
                self.opened.add(loc)
                return f"you open {loc} . " + self._contents(loc), 0
            case ["take", obj] if (self.holding is None and self.at in self.opened
                                   and self.place.get(obj) == self.at):
                self.holding = obj
                del self.place[obj]
                return f"you take {obj} .", 0
            case ["put", obj, "in", loc] if (obj == self.holding and loc == self.at
                                             and loc in self.opened):
                self.holding = None
                self.place[obj] = loc
                if self._solved():
                    return "task complete .", 1
                return f"you put {obj} in {loc} .", 0
            case ["look"]:
                where = f"you are at {self.at} ." if self.at else "you are in room ."
                return f"{where} you hold {self.holding or 'nothing'} .", 0
        return NOTHING_HAPPENS, 0

    def expert_action(self) -> str:
        if self.holding is not None:
            dest = self.goal if self.holding in self.targets else self.at
            if self.at != dest:
                return f"go to {dest}"
            if dest not in self.opened:
                return f"open {dest}"
            return f"put {self.holding} in {dest}"
        todo = [o for o in self.targets if self.place.get(o) != self.goal]
        obj = todo[0]
        src = self.place[obj]
        if self.at != src:
            return f"go to {src}"
        if src not in self.opened:
            return f"open {src}"
        return f"take {obj}"

    def expert_thought(self) -> str:
        return "i will " + self.expert_action()
