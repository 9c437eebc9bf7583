"""Built-in verification: scan properties, recurrence and attention oracles,
loss identities, and finite-difference gradient checks.

Each check is a named function returning (ok, detail). ``run_selftest``
prints a pass/fail table and reports overall success; a mutation hook can
perturb one named check to confirm that the tester itself discriminates.
"""

from __future__ import annotations

import time

import numpy as np

from .discriminator import DiscriminatorConfig, disc_forward, init_discriminator_weights
from .generator import (
    CRSAWeights,
    GeneratorConfig,
    block_forward,
    crsa_forward,
    group_forward,
    init_generator_weights,
)
from .losses import FeatureExtractor, adv_loss_discriminator, adv_loss_generator, content_loss
from .scan import Orientation, build_dual_path, build_strip_zigzag
from .ssm import init_ssm_params, ssm_scan, ssm_scan_naive
from .tensor import Tensor, finite_diff_check

# Hand-walked order for a 4x4 grid in strips of 2, flat indices row*4+col.
HAND_WALKED_4X4_S2_H = [0, 4, 5, 1, 2, 6, 7, 3, 11, 15, 14, 10, 9, 13, 12, 8]
HAND_WALKED_4X4_S2_V = [0, 1, 5, 4, 8, 9, 13, 12, 14, 15, 11, 10, 6, 7, 3, 2]


def _strip_of(flat: int, width: int, strip: int, orientation: Orientation) -> int:
    row, col = divmod(flat, width)
    return row // strip if orientation is Orientation.HORIZONTAL else col // strip


def check_scan_bijectivity(perturb: float = 0.0) -> tuple:
    for h in range(1, 13):
        for w in range(1, 13):
            for s in range(1, 5):
                for orientation in Orientation:
                    if s > (h if orientation is Orientation.HORIZONTAL else w):
                        continue
                    order = build_strip_zigzag(h, w, s, orientation)
                    perm = order.perm.copy()
                    if perturb:
                        perm[-1] = perm[0]  # duplicate entry: no longer onto
                    if sorted(perm.tolist()) != list(range(h * w)):
                        return False, f"{h}x{w} s={s} {orientation.value}: not a bijection"
                    if not np.array_equal(perm[order.inv_perm], np.arange(h * w)):
                        return False, f"{h}x{w} s={s} {orientation.value}: inverse broken"
    return True, "grids 1..12, strips 1..4, both orientations"


def check_scan_adjacency(perturb: float = 0.0) -> tuple:
    for h in range(1, 13):
        for w in range(1, 13):
            for s in range(1, 5):
                for orientation in Orientation:
                    if s > (h if orientation is Orientation.HORIZONTAL else w):
                        continue
                    order = build_strip_zigzag(h, w, s, orientation)
                    perm = order.perm.copy()
                    if perturb:
                        perm[-1] = perm[0]  # zero-length hop cannot be a unit move
                    rows, cols = perm // w, perm % w
                    for t in range(len(order) - 1):
                        dr = abs(int(rows[t + 1]) - int(rows[t]))
                        dc = abs(int(cols[t + 1]) - int(cols[t]))
                        same = _strip_of(int(perm[t]), w, s, orientation) == _strip_of(
                            int(perm[t + 1]), w, s, orientation
                        )
                        if same and dr + dc != 1:
                            return False, f"{h}x{w} s={s} {orientation.value}: jump inside strip at t={t}"
                        if not same:
                            along = dc if orientation is Orientation.HORIZONTAL else dr
                            across = dr if orientation is Orientation.HORIZONTAL else dc
                            if along != 0 or across > s:
                                return False, f"{h}x{w} s={s} {orientation.value}: bad boundary hop at t={t}"
    return True, "steps inside strips are unit moves; boundary hops stay in lane"


def check_scan_fixture(perturb: float = 0.0) -> tuple:
    got_h = build_strip_zigzag(4, 4, 2, Orientation.HORIZONTAL).perm.tolist()
    got_v = build_strip_zigzag(4, 4, 2, Orientation.VERTICAL).perm.tolist()
    if perturb:
        got_h[0], got_h[1] = got_h[1], got_h[0]
    if got_h != HAND_WALKED_4X4_S2_H:
        return False, f"horizontal 4x4 s=2 is {got_h}"
    if got_v != HAND_WALKED_4X4_S2_V:
        return False, f"vertical 4x4 s=2 is {got_v}"
    return True, "4x4 strips-of-2 matches the hand-walked order"


def _oracle_gap(selective: bool, cases: int, perturb: float) -> float:
    worst = 0.0
    for seed in range(cases):
        rng = np.random.default_rng(seed)
        t_len = int(rng.integers(1, 65))
        c = int(rng.integers(1, 9))
        n = int(rng.integers(1, 17))
        params = init_ssm_params(n, c, rng, selective=selective)
        seq = Tensor(rng.standard_normal((t_len, c)))
        h0 = Tensor(rng.standard_normal(n)) if seed % 3 == 0 else None
        fast = ssm_scan(seq, params, h0).data + perturb
        slow = ssm_scan_naive(seq, params, h0).data
        worst = max(worst, float(np.abs(fast - slow).max()))
    return worst


def check_ssm_oracle(perturb: float = 0.0) -> tuple:
    gap = _oracle_gap(selective=False, cases=200, perturb=perturb)
    return gap < 1e-12, f"worst fused-vs-stepwise gap {gap:.3e} over 200 cases"


def check_ssm_selective_oracle(perturb: float = 0.0) -> tuple:
    gap = _oracle_gap(selective=True, cases=200, perturb=perturb)
    return gap < 1e-12, f"worst fused-vs-stepwise gap {gap:.3e} over 200 cases"


def crsa_oracle(fhat: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Attention by explicit loops, no matrix routines."""
    h, wd, c = fhat.shape
    hw = h * wd
    g = np.zeros(c)
    for i in range(h):
        for j in range(wd):
            for ch in range(c):
                g[ch] += fhat[i, j, ch]
    g /= hw
    r = np.zeros_like(fhat)
    for i in range(h):
        for j in range(wd):
            for co in range(c):
                acc = b[co]
                for ci in range(c):
                    acc += fhat[i, j, ci] * w[ci, co]
                r[i, j, co] = acc
    g1 = np.zeros_like(fhat)
    for i in range(h):
        for j in range(wd):
            for ch in range(c):
                g1[i, j, ch] = r[i, j, ch] * g[ch]
    rf, g1f, ff = (arr.reshape(hw, c) for arr in (r, g1, fhat))
    a_sp = np.zeros((hw, hw))
    for p in range(hw):
        for q in range(hw):
            for ch in range(c):
                a_sp[p, q] += rf[p, ch] * g1f[q, ch]
    a_sp /= hw * c
    out = np.zeros((hw, c))
    for p in range(hw):
        for ch in range(c):
            for q in range(hw):
                out[p, ch] += a_sp[p, q] * ff[q, ch]
    return out.reshape(h, wd, c)


def check_crsa_oracle(perturb: float = 0.0) -> tuple:
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        h, wd = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        c = int(rng.integers(1, 5))
        fhat = rng.standard_normal((h, wd, c))
        w = rng.standard_normal((c, c))
        b = rng.standard_normal(c)
        weights = CRSAWeights(w=Tensor(w), b=Tensor(b))
        got = crsa_forward(Tensor(fhat), weights).data + perturb
        want = crsa_oracle(fhat, w, b)
        worst = max(worst, float(np.abs(got - want).max()))
    return worst < 1e-12, f"worst gap to the loop oracle {worst:.3e} over 50 cases"


def check_loss_identities(perturb: float = 0.0) -> tuple:
    phi = FeatureExtractor.create(seed=5)
    img = Tensor(np.random.default_rng(7).uniform(-1, 1, size=(16, 16, 3)))
    zero = content_loss(img, img, phi).item() + perturb
    if zero != 0.0:
        return False, f"content(img, img) = {zero}"
    flat = [Tensor(np.zeros((2, 2, 1))) for _ in range(3)]
    d_val = adv_loss_discriminator(flat, flat).item()
    sat = adv_loss_generator(flat, "saturating").item()
    nonsat = adv_loss_generator(flat, "nonsaturating").item()
    log2 = np.log(2.0)
    if abs(d_val - 2 * log2) > 1e-12:
        return False, f"uninformative-judge discriminator loss {d_val}"
    if abs(sat + log2) > 1e-12 or abs(nonsat - log2) > 1e-12:
        return False, f"uninformative-judge generator losses {sat}, {nonsat}"
    return True, "zero content at identity; half-probability values hit their closed forms"


def _small_block_inputs():
    rng = np.random.default_rng(11)
    cfg = GeneratorConfig(channels=4, state_dim=3, num_groups=1, blocks_per_group=1, strip_size=2)
    gw = init_generator_weights(cfg, rng)
    paths = build_dual_path(6, 6, 2)
    f = Tensor(rng.standard_normal((6, 6, 4)))
    return gw, paths, f


def check_gradients(perturb: float = 0.0) -> tuple:
    gw, paths, f = _small_block_inputs()
    block = gw.groups[0][0]
    checks = {
        "block input": finite_diff_check(lambda x: block_forward(x, block, paths).sum(), f),
        "group input": finite_diff_check(lambda x: group_forward(x, gw.groups[0], paths).sum(), f),
        "attention input": finite_diff_check(lambda x: crsa_forward(x, gw.crsa).sum(), f),
    }
    rng = np.random.default_rng(13)
    img = Tensor(rng.uniform(-1, 1, size=(16, 16, 3)))
    phi = FeatureExtractor.create(seed=3)
    target = Tensor(rng.uniform(-1, 1, size=(16, 16, 3)))
    checks["content loss"] = finite_diff_check(lambda x: content_loss(target, x, phi), img)
    dw = init_discriminator_weights(DiscriminatorConfig(num_scales=1, channels=(6, 8)), rng)
    checks["judge input"] = finite_diff_check(lambda x: disc_forward(x, dw)[0].mean(), img)
    fake = Tensor(rng.standard_normal((3, 3, 1)))
    real = Tensor(rng.standard_normal((3, 3, 1)))
    checks["adversarial loss"] = max(
        finite_diff_check(lambda x: adv_loss_discriminator([real], [x]), fake),
        finite_diff_check(lambda x: adv_loss_generator([x], "nonsaturating"), fake),
    )
    worst = max(checks.values()) + perturb
    detail = ", ".join(f"{k} {v:.1e}" for k, v in checks.items())
    return worst < 1e-4, detail


CHECKS = (
    ("scan-bijectivity", check_scan_bijectivity),
    ("scan-adjacency", check_scan_adjacency),
    ("scan-fixture", check_scan_fixture),
    ("ssm-oracle", check_ssm_oracle),
    ("ssm-selective-oracle", check_ssm_selective_oracle),
    ("crsa-oracle", check_crsa_oracle),
    ("loss-identities", check_loss_identities),
    ("gradients", check_gradients),
)


def run_selftest(mutate: str | None = None, echo=print) -> bool:
    """Run every check; with ``mutate`` set, perturb that check's comparison
    to confirm a broken implementation would be caught. The injected error
    sits above every check's tolerance, so a mutated run must fail."""
    if mutate is not None and mutate not in {name for name, _ in CHECKS}:
        raise ValueError(f"selftest: no check named {mutate!r}")
    all_ok = True
    for name, fn in CHECKS:
        start = time.perf_counter()
        ok, detail = fn(perturb=1e-3 if name == mutate else 0.0)
        took = time.perf_counter() - start
        all_ok &= ok
        echo(f"{'PASS' if ok else 'FAIL'}  {name:<22} {took:6.2f}s  {detail}")
    echo("selftest: all checks passed" if all_ok else "selftest: FAILURES above")
    return all_ok


def run_gradcheck(profile: str = "desk", echo=print) -> bool:
    """Finite-difference sweep at profile widths.

    The desk profile checks at its native sizes. The paper-scale profile
    keeps its channel and state widths but shrinks the spatial grid, since
    central differences over every coordinate at full resolution would run
    for hours without telling us anything new about the closures.
    """
    if profile == "desk":
        cfg = GeneratorConfig.desk()
        grid = 8
    else:
        cfg = GeneratorConfig.paper_scale()
        cfg.num_groups, cfg.blocks_per_group = 1, 1
        grid = 4
    rng = np.random.default_rng(17)
    gw = init_generator_weights(cfg, rng)
    paths = build_dual_path(grid, grid, min(cfg.strip_size, grid))
    f = Tensor(rng.standard_normal((grid, grid, cfg.channels)))
    block = gw.groups[0][0]
    results = {
        "block alpha": finite_diff_check(
            lambda a: block_forward(f, _with_alpha(block, a), paths).sum(), block.alpha
        ),
        "attention weight": finite_diff_check(
            lambda w: crsa_forward(f, CRSAWeights(w=w, b=gw.crsa.b)).sum(), gw.crsa.w
        ),
        "ssm transition": finite_diff_check(
            lambda a_raw: _scan_with(block.branch_h.ssm, a_raw, f, paths).sum(), block.branch_h.ssm.a_raw
        ),
    }
    ok = True
    for name, rel in results.items():
        line_ok = rel < 1e-4
        ok &= line_ok
        echo(f"{'PASS' if line_ok else 'FAIL'}  {name:<22} rel err {rel:.2e}")
    return ok


def _with_alpha(block, alpha):
    from dataclasses import replace

    return replace(block, alpha=alpha)


def _scan_with(params, a_raw, f, paths):
    from dataclasses import replace

    from .scan import serialize

    return ssm_scan(serialize(f, paths.horizontal), replace(params, a_raw=a_raw))
