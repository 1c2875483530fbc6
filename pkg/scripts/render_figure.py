"""SVG figures: an IDLA cluster with its radius outlines, and the same on the nine-copy graph.

    python3 scripts/render_figure.py --n 32 --seed 1 --outdir figures
"""
import argparse
from pathlib import Path

from sgidla.gasket import DOUBLED_SG, GraphFamily, ball_volume
from sgidla.idla import grow, radii
from sgidla.render import render
from sgidla.walk import RngStream


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=32)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--outdir", type=Path, default=Path("figures"))
    args = p.parse_args(argv)
    args.outdir.mkdir(parents=True, exist_ok=True)

    for name, fam in (("sg", DOUBLED_SG), ("nine_copy", GraphFamily.nine_copy())):
        cl = grow(fam, ball_volume(fam, args.n), RngStream(args.seed))
        r = radii(cl)
        path = args.outdir / f"cluster_{name}_n{args.n}.svg"
        path.write_text(render(cl))
        print(f"{path}: {cl.particle_count} particles, r_in={r.r_in} r_out={r.r_out}")


if __name__ == "__main__":
    main()
