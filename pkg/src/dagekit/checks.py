"""Self-check suite behind ``dagekit check``.

Each check is a small randomized or golden-value test of a mathematical
property of the package; it returns ``(passed, detail)``.
"""
import json
import os
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import graphs, kernels, losses, protocol, spectral, synthetic, trainer
from .data import DomainTag

GOLDEN_PATH = os.path.join(os.path.dirname(__file__), "golden.json")


def load_golden(path=None):
    with open(path or GOLDEN_PATH, encoding="utf-8") as fh:
        return json.load(fh)


@dataclass(frozen=True)
class Check:
    name: str
    tags: tuple
    fn: object

    def matches(self, needle):
        needle = needle.lower()
        return needle in self.name.lower() or any(needle in t for t in self.tags)


def _rel(a, b):
    return abs(a - b) / max(1.0, abs(a), abs(b))


def _random_batch(rng, n_src=5, n_tgt=5, d=3, classes=3, feat=4):
    labels = np.concatenate([np.arange(n_src) % classes, rng.integers(0, classes, n_tgt)])
    domains = np.array([DomainTag.SOURCE] * n_src + [DomainTag.TARGET] * n_tgt)
    return losses.Batch(rng.normal(size=(d, n_src + n_tgt)), labels, domains, rng.normal(size=(feat, n_tgt)))


def check_energy_identity(rng):
    worst = 0.0
    for _ in range(1000):
        n, d = rng.integers(2, 13), rng.integers(1, 6)
        w = rng.uniform(size=(n, n)) * (rng.uniform(size=(n, n)) < 0.6)
        np.fill_diagonal(w, 0.0)
        phi = rng.normal(size=(d, n))
        lhs = kernels.pair_energy(w, phi)
        rhs = 2.0 * np.trace(phi @ graphs.laplacian(w) @ phi.T)
        worst = max(worst, _rel(lhs, rhs))
    return worst <= 1e-12, f"max rel err {worst:.2e}"


def check_laplacian_psd(rng):
    rows, neg = 0.0, 0.0
    for _ in range(50):
        b = _random_batch(rng)
        mats = [graphs.dage_lda_graphs(b.labels), graphs.ccsa_graphs(b.embedded, b.labels, b.domains, 2.0)]
        try:
            mats.append(graphs.dsne_graphs(b.embedded, b.labels, b.domains))
        except graphs.GraphError:
            pass
        for gp in mats:
            for lap in (gp.L, gp.B):
                scale = max(np.abs(lap).max(), 1e-300)
                rows = max(rows, np.abs(lap.sum(axis=1)).max() / scale)
                neg = max(neg, -np.linalg.eigvalsh(lap).min() / scale)
    return rows <= 1e-10 and neg <= 1e-9, f"row-sum {rows:.2e}, negative eig {neg:.2e} (relative)"


def check_dage_gradient(rng):
    worst = 0.0
    for _ in range(20):
        n = rng.integers(4, 10)
        phi = rng.normal(size=(3, n))
        gp = graphs.dage_lda_graphs(rng.integers(0, 3, n))
        if np.trace(phi @ gp.B @ phi.T) <= 1e-9:
            continue
        g = losses.dage_grad(phi, gp.L, gp.B)
        fd = losses.finite_difference_grad(lambda p: losses.dage_loss(p, gp.L, gp.B).value, phi)
        worst = max(worst, np.abs(g - fd).max() / max(np.abs(g).max(), 1e-300))
    return worst <= 1e-6, f"max rel err {worst:.2e}"


def check_pair_loss_gradients(rng):
    worst = 0.0
    for _ in range(10):
        b = _random_batch(rng)
        sigma = graphs.median_heuristic_sigma(b.original_features)
        cases = [
            (lambda p: losses.ccsa_loss(b.with_embedding(p), 1.5).value, losses.ccsa_grad(b, 1.5)),
            (lambda p: losses.nem_loss(b.with_embedding(p), 1.5, 0.5, 2, sigma).value,
             losses.nem_grad(b, 1.5, 0.5, 2, sigma)),
        ]
        try:
            cases.append((lambda p: losses.dsne_loss(b.with_embedding(p)).value, losses.dsne_grad(b)))
        except graphs.GraphError:
            pass
        for fn, g in cases:
            fd = losses.finite_difference_grad(fn, b.embedded)
            worst = max(worst, np.abs(g - fd).max() / max(np.abs(g).max(), 1.0))
    return worst <= 1e-6, f"max rel err {worst:.2e}"


def check_ce_gradient(rng):
    worst = 0.0
    for _ in range(10):
        logits = rng.normal(size=(4, 6))
        labels = rng.integers(0, 4, 6)
        _, g = trainer.ce_loss_and_grad(logits, labels)
        fd = losses.finite_difference_grad(lambda z: trainer.ce_loss_and_grad(z, labels)[0], logits)
        worst = max(worst, np.abs(g - fd).max() / np.abs(g).max())
    return worst <= 1e-7, f"max rel err {worst:.2e}"


def check_loss_equivalences(rng):
    worst = 0.0
    for _ in range(50):
        b = _random_batch(rng)
        phi = b.embedded
        gp = graphs.ccsa_graphs(phi, b.labels, b.domains, 2.0)
        tr = lambda lap: float(np.trace(phi @ lap @ phi.T))  # noqa: E731
        # the margin term enters with a plus sign: Wp d^2 = max(0, eps - d)^2 / 2 >= 0
        worst = max(worst, _rel(losses.ccsa_loss(b, 2.0).value, 2.0 * (tr(gp.L) + tr(gp.B))))
        try:
            gd = graphs.dsne_graphs(phi, b.labels, b.domains)
            worst = max(worst, _rel(losses.dsne_loss(b).value, 2.0 * (tr(gd.L) - tr(gd.B))))
        except graphs.GraphError:
            pass
        sigma = graphs.median_heuristic_sigma(b.original_features)
        nbrs = graphs.knn_in_input_space(b.original_features, 2)
        w = graphs.nem_neighbour_weights(phi, b.original_features, nbrs, b.domains, sigma)
        term = losses.nem_neighbour_term(b, 2, sigma).value
        worst = max(worst, _rel(term, 2.0 * tr(graphs.laplacian(w))))
    return worst <= 1e-10, f"max rel err {worst:.2e}"


def _random_pd(rng, m):
    a = rng.normal(size=(m, m))
    return a @ a.T + 0.1 * np.eye(m)


def check_ratio_trace(rng):
    worst_res, worst_gap = 0.0, 0.0
    for _ in range(10):
        sl, sb = _random_pd(rng, 6), _random_pd(rng, 6)
        pencil = spectral.ScatterPencil(sl, sb)
        model = spectral.solve_ratio_trace(pencil, 3, reg=0.0)
        v, lam = model.projection, model.eigenvalues
        res = np.linalg.norm(sb @ v - sl @ v @ np.diag(lam)) / np.linalg.norm(sb)
        worst_res = max(worst_res, res)
        v1 = spectral.solve_ratio_trace(pencil, 1, reg=0.0).projection[:, 0]
        best = (v1 @ sb @ v1) / (v1 @ sl @ v1)
        u = rng.normal(size=(6, 100_000))
        search = np.max(np.einsum("ij,ij->j", u, sb @ u) / np.einsum("ij,ij->j", u, sl @ u))
        worst_gap = max(worst_gap, search - best)
    ok = worst_res <= 1e-8 and worst_gap <= 1e-9
    return ok, f"residual {worst_res:.2e}, random-search excess {worst_gap:.2e}"


def check_trace_ratio(rng):
    res = spectral.solve_trace_ratio(spectral.ScatterPencil(np.diag([4.0, 1.0]), np.eye(2)), 1, reg=0.0)
    exact = abs(res.lam - 1.0) <= 1e-12 and abs(abs(res.model.projection[1, 0]) - 1.0) <= 1e-12
    worst = 0.0
    for _ in range(100):
        m, d = 6, rng.integers(1, 4)
        out = spectral.solve_trace_ratio(spectral.ScatterPencil(_random_pd(rng, m), _random_pd(rng, m)), d, reg=0.0)
        h = np.asarray(out.lambda_history)
        worst = max(worst, float(np.max(np.diff(h) / np.maximum(1.0, h[:-1]), initial=0.0)))
    return exact and worst <= 1e-12, f"diagonal exact={exact}, max increase {worst:.2e}"


def check_kernel_consistency(rng):
    worst = 0.0
    for _ in range(5):
        dim, n = rng.integers(2, 9), rng.integers(12, 41)
        x = rng.normal(size=(dim, n))
        labels = rng.integers(0, 3, n)
        gp = graphs.dage_lda_graphs(labels)
        d = min(2, dim - 1) or 1
        lin = spectral.fit_linear_dage(x, gp, d, reg=1e-10)
        ker = spectral.fit_kernel_dage(x, gp, spectral.LINEAR, d, reg=1e-10)
        ang = scipy.linalg.subspace_angles(lin.transform(x).T, ker.transform(x).T)
        worst = max(worst, float(np.max(ang)))
    return worst < 1e-6, f"max principal angle {worst:.2e} rad"


def benchmark_manifest():
    cfg_seeds = (0, 1, 2, 3, 4)
    src, tgt = synthetic.generate(synthetic.BENCHMARK_SPEC)
    return protocol.build_manifest(src, tgt, protocol.ProtocolParams(0.3, 20, 3, (1, 3), 0), cfg_seeds)


def check_manifest_golden(golden):
    m = benchmark_manifest()
    ok = m.manifest_hash == golden["benchmark_manifest"] and m.disjoint()
    return ok, f"digest {m.manifest_hash[:16]}..., expected {str(golden['benchmark_manifest'])[:16]}..."


def check_office_pair_counts(_rng):
    c = 31
    src_labels = np.repeat(np.arange(c), 20)
    tgt_labels = np.repeat(np.arange(c), 3)
    ps = protocol.cartesian_pairs(src_labels, list(range(src_labels.size)), tgt_labels,
                                  list(range(tgt_labels.size)), (1, 3), 0)
    ok = (ps.n_same, ps.n_diff, ps.available_diff) == (1860, 5580, 55800)
    return ok, f"n_same={ps.n_same}, n_diff={ps.n_diff}, available={ps.available_diff}"


def check_synthetic_determinism(golden):
    a = synthetic.generate(synthetic.BENCHMARK_SPEC)
    b = synthetic.generate(synthetic.BENCHMARK_SPEC)
    digest = protocol.sha256_hex(protocol.fingerprint_dataset(a[0]) + protocol.fingerprint_dataset(a[1]))
    ok = a[0].equals(b[0]) and a[1].equals(b[1]) and digest == golden["benchmark_data"]
    return ok, f"data digest {digest[:16]}..."


def all_checks(golden):
    return [
        Check("energy identity", ("graphs", "energy"), check_energy_identity),
        Check("laplacian psd", ("graphs", "energy"), check_laplacian_psd),
        Check("dage gradient", ("gradient", "losses"), check_dage_gradient),
        Check("pair loss gradients", ("gradient", "losses"), check_pair_loss_gradients),
        Check("cross-entropy gradient", ("gradient", "trainer"), check_ce_gradient),
        Check("graph-form loss equivalences", ("losses", "equivalence"), check_loss_equivalences),
        Check("ratio trace oracle", ("solver",), check_ratio_trace),
        Check("trace ratio monotone", ("solver",), check_trace_ratio),
        Check("kernel consistency", ("solver", "kernel"), check_kernel_consistency),
        Check("manifest golden digest", ("protocol", "determinism"), lambda _r: check_manifest_golden(golden)),
        Check("office pair counts", ("protocol",), check_office_pair_counts),
        Check("synthetic determinism", ("synthetic", "determinism"), lambda _r: check_synthetic_determinism(golden)),
    ]


def run_checks(name_filter=None, golden_path=None, seed=0, out=print):
    """Run matching checks, print one line each, return True iff all pass."""
    golden = load_golden(golden_path)
    checks = [c for c in all_checks(golden) if name_filter is None or c.matches(name_filter)]
    ok_all = True
    for c in checks:
        rng = np.random.default_rng(seed)
        try:
            ok, detail = c.fn(rng)
        except Exception as exc:  # a crashing check is a failing check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        ok_all &= bool(ok)
        out(f"{'PASS' if ok else 'FAIL'}  {c.name}: {detail}")
    if not checks:
        out(f"no checks match {name_filter!r}")
    return ok_all
