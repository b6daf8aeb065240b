"""Regenerate the bundled instance files under instances/."""
from pathlib import Path

from team_lagrange import generators as gen
from team_lagrange.documents import save_instance

OUT = Path(__file__).resolve().parent.parent / "instances"
RANDOM_SEEDS = (0, 6, 9, 15, 18, 19)


def main():
    OUT.mkdir(exist_ok=True)
    named = [gen.symmetric_instance(), gen.scalar_constrained_instance(), gen.full_information_instance(),
             gen.static_team_instance(), gen.static_team_instance("none"), gen.static_team_instance("full"),
             gen.mean_variance_instance(), gen.chain_instance()]
    named += [gen.random_instance(s) for s in RANDOM_SEEDS]
    for inst in named:
        save_instance(inst, OUT / f"{inst.name}.json")
        print(OUT / f"{inst.name}.json")


if __name__ == "__main__":
    main()
