import numpy as np
import pytest

from cocktail_miner.cli import bundled
from cocktail_miner.dataset import ReportSet, build_index
from cocktail_miner.tree import build_tree, load_tree, synthetic_tree_rows


@pytest.fixture(scope="session")
def toy():
    return load_tree(bundled("toy_tree.csv"))


@pytest.fixture(scope="session")
def fig(toy):
    """Map the figure's node numbers (stored as labels) to tree ids."""
    by_label = {label: v for v, label in enumerate(toy.labels)}
    return lambda *nums: tuple(sorted(by_label[str(n)] for n in nums))


@pytest.fixture(scope="session")
def tree200():
    return load_tree(bundled("tree200.csv"))


@pytest.fixture(scope="session")
def small_tree():
    return build_tree(synthetic_tree_rows(40, seed=3, n_roots=2))


def random_reports(tree, n, seed, ae_rate=0.2, max_drugs=4):
    rng = np.random.default_rng(seed)
    leaves = tree.leaf_ids
    drugs = []
    for _ in range(n):
        k = int(rng.integers(1, max_drugs + 1))
        drugs.append(tuple(sorted(set(int(v) for v in rng.choice(leaves, size=k)))))
    ae = rng.random(n) < ae_rate
    return ReportSet(tuple(f"p{i}" for i in range(n)), tuple(drugs), ae, 0, 0)


@pytest.fixture(scope="session")
def toy_reports(toy, fig):
    """20 hand-written patients on the figure tree (leaves 3, 4, 5, 6)."""
    rows = [
        ((3,), 0), ((3, 4), 1), ((3, 5), 1), ((4,), 0), ((4, 6), 0),
        ((5,), 0), ((5, 6), 1), ((6,), 0), ((3, 6), 0), ((3, 4, 5), 1),
        ((4, 5), 0), ((3,), 1), ((6,), 0), ((5, 6), 1), ((4,), 0),
        ((3, 5, 6), 0), ((4, 6), 1), ((3,), 0), ((5,), 0), ((3, 4), 1),
    ]
    drugs = tuple(fig(*d) for d, _ in rows)
    ae = np.array([bool(a) for _, a in rows])
    return ReportSet(tuple(f"p{i:02d}" for i in range(20)), drugs, ae, 0, 0)


@pytest.fixture(scope="session")
def toy_index(toy_reports, toy):
    return build_index(toy_reports, toy)
