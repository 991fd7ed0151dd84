"""Surrogates: kernel math, MLL training, posterior equivalence, fidelity slices."""

import math

import numpy as np
import pytest

from promptband.domain import EvalRecord, EvaluationLedger, build_prompt_space, record_evaluation
from promptband.errors import InsufficientDataError, ValidationError
from promptband.numerics import adamw_step  # noqa: F401  (sanity: same AdamW feeds fit)
from promptband.surrogate import (
    INIT_LOG_NOISE,
    NOISE_FLOOR,
    KernelParams,
    _build_features,
    _objective,
    design_slice,
    fit,
    latent_alignment_score,
    matern52,
    predict,
    select_training_fidelity,
)

# ---------------------------------------------------------------------------
# Independent oracles: explicit-formula kernel, elimination-based solve/det.
# ---------------------------------------------------------------------------


def naive_matern(u, v, lengthscales, outputscale):
    r2 = 0.0
    for a, b, l in zip(u, v, lengthscales):
        r2 += ((a - b) / l) ** 2
    r = math.sqrt(r2)
    return outputscale * (1.0 + math.sqrt(5) * r + 5.0 * r * r / 3.0) * math.exp(-math.sqrt(5) * r)


def naive_solve(a, b):
    a = [list(map(float, row)) for row in a]
    b = [float(x) for x in b]
    n = len(a)
    for col in range(n):
        pivot = max(range(col, n), key=lambda r: abs(a[r][col]))
        a[col], a[pivot] = a[pivot], a[col]
        b[col], b[pivot] = b[pivot], b[col]
        d = a[col][col]
        a[col] = [x / d for x in a[col]]
        b[col] /= d
        for row in range(n):
            if row != col:
                f = a[row][col]
                a[row] = [x - f * y for x, y in zip(a[row], a[col])]
                b[row] -= f * b[col]
    return b


def naive_logdet(a):
    a = [list(map(float, row)) for row in a]
    n = len(a)
    logdet = 0.0
    for col in range(n):
        pivot = max(range(col, n), key=lambda r: abs(a[r][col]))
        if pivot != col:
            a[col], a[pivot] = a[pivot], a[col]  # SPD: determinant sign untouched below
        d = a[col][col]
        logdet += math.log(abs(d))
        for row in range(col + 1, n):
            f = a[row][col] / d
            a[row] = [x - f * y for x, y in zip(a[row], a[col])]
    return logdet


def naive_gp(train_rep, targets, kernel):
    n = len(train_rep)
    k = [
        [naive_matern(train_rep[i], train_rep[j], kernel.lengthscales, kernel.outputscale) for j in range(n)]
        for i in range(n)
    ]
    for i in range(n):
        k[i][i] += kernel.noise
    alpha = naive_solve([row[:] for row in k], list(targets))
    mll = -float(np.dot(targets, alpha)) - naive_logdet(k)
    return k, alpha, mll


def naive_posterior(train_rep, targets, kernel, query_rep):
    k, alpha, _ = naive_gp(train_rep, targets, kernel)
    mus, variances = [], []
    for q in query_rep:
        ks = [naive_matern(t, q, kernel.lengthscales, kernel.outputscale) for t in train_rep]
        mu = float(np.dot(ks, alpha))
        w = naive_solve([row[:] for row in k], ks)
        var = kernel.outputscale - float(np.dot(ks, w))
        mus.append(mu)
        variances.append(max(var, 0.0))
    return np.array(mus), np.array(variances)


def _space(n_i=3, n_e=4, d=4, seed=0):
    rng = np.random.default_rng(seed)
    return build_prompt_space(
        [(i, rng.normal(size=d)) for i in range(n_i)],
        [(e, rng.normal(size=d)) for e in range(n_e)],
    )


def _records(space, prompt_ids, size, seed=0):
    rng = np.random.default_rng(seed)
    return [EvalRecord(int(p), size, float(rng.uniform(0, 1)), k) for k, p in enumerate(prompt_ids)]


class TestMatern:
    def test_zero_distance_returns_outputscale(self):
        params = KernelParams(lengthscales=np.ones(3), outputscale=2.5, noise=1e-4)
        u = np.array([0.3, 0.7, 0.1])
        assert matern52(u, u, params) == pytest.approx(2.5)

    def test_monotone_decay(self):
        params = KernelParams(lengthscales=np.ones(1), outputscale=1.0, noise=1e-4)
        values = [matern52(np.array([0.0]), np.array([t]), params) for t in np.linspace(0, 50, 200)]
        assert all(a >= b - 1e-15 for a, b in zip(values, values[1:]))
        assert values[-1] < 1e-8

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(1)
        for _ in range(25):
            d = rng.integers(1, 6)
            ls = rng.uniform(0.2, 3.0, d)
            os_ = float(rng.uniform(0.5, 4.0))
            params = KernelParams(lengthscales=ls, outputscale=os_, noise=1e-4)
            u, v = rng.normal(size=d), rng.normal(size=d)
            assert matern52(u, v, params) == pytest.approx(naive_matern(u, v, ls, os_), abs=1e-12)

    def test_positive_lengthscales_required(self):
        with pytest.raises(ValidationError):
            KernelParams(lengthscales=np.array([1.0, 0.0]), outputscale=1.0, noise=1e-4)


class TestFit:
    def test_two_points_never_regress_past_init(self):
        space = _space()
        records = _records(space, [0, 5], size=4, seed=1)
        snap = fit("vanilla", space, records, seed=2)
        # MLL at the initialization, via the independent oracle.
        init = KernelParams(
            lengthscales=np.ones(snap.train_rep.shape[1]),
            outputscale=1.0,
            noise=NOISE_FLOOR + math.exp(INIT_LOG_NOISE),
        )
        _, _, init_mll = naive_gp(snap.train_rep, snap.targets_std, init)
        assert snap.mll_value >= init_mll - 1e-9

    @pytest.mark.parametrize("kind", ["vanilla", "dk_structural", "dk_flat", "pca"])
    def test_mll_matches_direct_oracle(self, kind):
        space = _space(d=3, seed=3)
        records = _records(space, [0, 2, 4, 7, 9, 11], size=8, seed=4)
        snap = fit(kind, space, records, seed=5, max_epochs=40)
        _, _, mll = naive_gp(snap.train_rep, snap.targets_std, snap.kernel)
        assert snap.mll_value == pytest.approx(mll, rel=1e-8, abs=1e-8)

    def test_pca_dimension_rule(self):
        space = _space(n_i=4, n_e=5, d=6, seed=6)
        for n_train, expect in ((3, 2), (12, 10)):
            records = _records(space, list(range(n_train)), size=4, seed=7)
            snap = fit("pca", space, records, seed=8, max_epochs=5)
            assert snap.pca_components.shape[0] == expect
            assert snap.train_rep.shape[1] == expect

    def test_constant_targets_survive(self):
        space = _space()
        records = [EvalRecord(p, 4, 0.5, k) for k, p in enumerate([0, 3, 6])]
        snap = fit("vanilla", space, records, seed=9, max_epochs=20)
        assert np.isfinite(snap.mll_value)
        assert snap.target_std == pytest.approx(1e-8)

    def test_fidelity_purity(self):
        space = _space()
        records = _records(space, [0, 1], size=4) + _records(space, [2, 3], size=8)
        with pytest.raises(ValidationError):
            fit("vanilla", space, records, seed=0)

    def test_dedup_keeps_latest(self):
        records = [
            EvalRecord(0, 4, 0.2, 0),
            EvalRecord(1, 4, 0.4, 1),
            EvalRecord(0, 4, 0.9, 2),
        ]
        ids, targets, size = design_slice(records)
        assert ids == [0, 1]
        assert targets.tolist() == [0.9, 0.4]
        assert size == 4

    def test_standardization_round_trip(self):
        space = _space()
        records = _records(space, [0, 2, 5, 8], size=4, seed=10)
        snap = fit("vanilla", space, records, seed=11, max_epochs=5)
        raw = np.array([r.mean_error for r in records])
        assert np.allclose(snap.unstandardize(snap.standardize(raw)), raw, atol=1e-12)


class TestPredict:
    def test_matches_direct_posterior(self):
        rng = np.random.default_rng(12)
        for trial in range(10):
            space = _space(d=3, seed=trial)
            n = int(rng.integers(2, 9))
            train_ids = list(rng.choice(space.n_prompts, n, replace=False))
            records = _records(space, train_ids, size=8, seed=trial + 50)
            snap = fit("vanilla", space, records, seed=trial, max_epochs=30)
            query = [p for p in range(space.n_prompts) if p not in train_ids][:4]
            mu, sigma = predict(snap, query)
            from promptband.surrogate import _query_rep

            naive_mu, naive_var = naive_posterior(
                snap.train_rep, snap.targets_std, snap.kernel, _query_rep(snap, query)
            )
            assert np.allclose(mu, naive_mu, rtol=1e-8, atol=1e-8)
            assert np.allclose(sigma, np.sqrt(naive_var), rtol=1e-8, atol=1e-8)

    def test_interpolates_training_points(self):
        space = _space(seed=13)
        records = _records(space, [0, 2, 5, 8, 10], size=8, seed=14)
        snap = fit("vanilla", space, records, seed=15)
        mu, _ = predict(snap, list(snap.prompt_ids))
        sigma_noise = math.sqrt(snap.kernel.noise)
        assert np.all(np.abs(mu - snap.targets_std) <= 3 * sigma_noise + 1e-6)

    def test_far_point_reverts_to_prior(self):
        params = KernelParams(lengthscales=np.full(2, 0.01), outputscale=1.7, noise=1e-4)
        far = naive_matern([0.0, 0.0], [50.0, 50.0], params.lengthscales, params.outputscale)
        assert far < 1e-10  # far query: posterior variance reverts to outputscale
        space = _space(seed=16)
        records = _records(space, [0, 1, 2], size=4, seed=17)
        snap = fit("vanilla", space, records, seed=18, max_epochs=10)
        # Synthetic far query in representation space via the naive oracle.
        _, var = naive_posterior(
            snap.train_rep, snap.targets_std, snap.kernel, [snap.train_rep[0] + 1e4]
        )
        assert var[0] == pytest.approx(snap.kernel.outputscale, abs=1e-6)


class TestMllGradients:
    @pytest.mark.parametrize("kind", ["vanilla", "dk_structural"])
    def test_matches_central_differences(self, kind):
        rng = np.random.default_rng(19)
        h = 1e-5
        worst = 0.0
        for draw in range(20):
            d = 3
            n = int(rng.integers(3, 7))
            x = rng.uniform(0, 1, (n, 2 * d))
            v = rng.normal(size=n)
            feats = _build_features(kind, d, np.random.default_rng(300 + draw))
            k_dims = x.shape[1] if kind == "vanilla" else 10
            params = [rng.normal(size=k_dims) * 0.3, rng.normal(size=1) * 0.3, np.array([-2.0])]
            params += [p.copy() for p in feats.params()]

            def objective():
                if feats.trainable:
                    feats.set_params(params[3:])
                mll, grads, _ = _objective(x, v, feats, params[0], params[1], params[2], True)
                return mll, grads

            _, grads = objective()
            for block in range(len(params)):
                flat = params[block].reshape(-1)
                gflat = grads[block].reshape(-1)
                picks = range(flat.size) if flat.size <= 4 else rng.integers(0, flat.size, 4)
                for j in picks:
                    old = flat[j]
                    flat[j] = old + h
                    up, _ = objective()
                    flat[j] = old - h
                    down, _ = objective()
                    flat[j] = old
                    numeric = (up - down) / (2 * h)
                    rel = abs(numeric - gflat[j]) / max(1.0, abs(numeric), abs(gflat[j]))
                    worst = max(worst, rel)
        assert worst <= 1e-3


class TestFidelitySelection:
    def _ledger_with(self, sizes_counts):
        ledger = EvaluationLedger()
        k = 0
        for size, count in sizes_counts:
            for _ in range(count):
                ledger.records.append(EvalRecord(k, size, 0.5, k))
                k += 1
        return ledger

    def test_highest_with_enough_records(self):
        ledger = self._ledger_with([(10, 6), (20, 3)])
        assert select_training_fidelity(ledger, min_count=4) == 10

    def test_prefers_highest_qualifying(self):
        ledger = self._ledger_with([(10, 4), (80, 4)])
        assert select_training_fidelity(ledger, min_count=4) == 80

    def test_none_when_threshold_unmet(self):
        ledger = self._ledger_with([(10, 3)])
        assert select_training_fidelity(ledger, min_count=4) is None


class TestAlignmentScore:
    def _snap(self):
        space = _space(n_i=4, n_e=6, d=4, seed=20)
        records = _records(space, list(range(8)), size=8, seed=21)
        return space, fit("vanilla", space, records, seed=22, max_epochs=10)

    def test_perfect_predictor_scores_one(self):
        space, snap = self._snap()
        holdout_ids = [p for p in range(space.n_prompts) if p not in snap.prompt_ids][:6]
        mu, _ = predict(snap, holdout_ids)
        truth = snap.unstandardize(mu)  # holdout errors equal to the predictions
        score = latent_alignment_score(snap, list(zip(holdout_ids, truth)))
        assert score == pytest.approx(1.0)

    def test_negated_predictor_scores_minus_one(self):
        space, snap = self._snap()
        holdout_ids = [p for p in range(space.n_prompts) if p not in snap.prompt_ids][:6]
        mu, _ = predict(snap, holdout_ids)
        truth = -snap.unstandardize(mu)
        score = latent_alignment_score(snap, list(zip(holdout_ids, truth)))
        assert score == pytest.approx(-1.0)

    def test_requires_three_points(self):
        space, snap = self._snap()
        holdout_ids = [p for p in range(space.n_prompts) if p not in snap.prompt_ids][:2]
        with pytest.raises(InsufficientDataError):
            latent_alignment_score(snap, [(p, 0.5) for p in holdout_ids])

    def test_rejects_overlapping_holdout(self):
        space, snap = self._snap()
        with pytest.raises(ValidationError):
            latent_alignment_score(snap, [(snap.prompt_ids[0], 0.1), (20, 0.2), (21, 0.3)])


class TestLearnedFeaturesGeneralize:
    def test_deep_kernel_beats_raw_embedding_gp(self, synthetic_scenario):
        """Canonical 200-train/50-holdout split, 20 paired seeded fits: the
        learned latent space ranks held-out prompts better than the
        raw-embedding GP in at least 70% of repetitions."""
        space = synthetic_scenario.space
        vm = synthetic_scenario.oracle.full_valid_means()
        split_rng = np.random.default_rng(7)
        ids = split_rng.choice(space.n_prompts, 250, replace=False)
        train, hold = ids[:200], ids[200:]
        records = [EvalRecord(int(p), 200, float(vm[p]), k) for k, p in enumerate(train)]
        holdout = [(int(p), float(vm[p])) for p in hold]
        # The raw-embedding fit has no seeded component (identity features
        # consume no randomness), so one fit stands for every paired seed.
        raw_score = latent_alignment_score(fit("vanilla", space, records, seed=0), holdout)
        wins = 0
        for seed in range(20):
            deep_score = latent_alignment_score(
                fit("dk_structural", space, records, seed=seed), holdout
            )
            wins += deep_score > raw_score
        assert wins >= 14  # at least 70% of 20 paired repetitions
