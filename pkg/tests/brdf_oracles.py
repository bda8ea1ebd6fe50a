"""Quadrature and binning helpers shared by the BRDF tests and the acceptance suite."""

import numpy as np
from scipy import stats

from restir_ir import brdf

N = np.array([0.0, 0.0, 1.0])


def stratified(k, rng=None):
    """k*k stratified points in [0,1)^2 (jittered when ``rng`` is given)."""
    i, j = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
    off = 0.5 if rng is None else rng.random((k, k, 2))
    if rng is None:
        u = np.stack([(i + off) / k, (j + off) / k], -1)
    else:
        u = np.stack([(i + off[..., 0]) / k, (j + off[..., 1]) / k], -1)
    return u.reshape(-1, 2)


def wo_at(mu):
    return np.array([np.sqrt(1.0 - mu * mu), 0.0, mu])


def directional_albedo(mat, wo, k=1000, specular=1.0):
    """int f_r cos dwi by importance-sampling the lobe mixture on a stratified grid."""
    wi, p, ok = brdf.sample_many(mat, wo, N, stratified(k), "mixture")
    f = brdf.eval_brdf_many(mat, wi[ok], wo, N, specular)
    return (f * wi[ok, 2:3] / p[ok, None]).sum(axis=0) / len(p)


def hemisphere_integral_of_pdf(mat, wo, lobe, k=1000):
    """int pdf dwi with a midpoint grid uniform in (cos theta, phi)."""
    u = stratified(k)
    z = u[:, 0]
    s = np.sqrt(1.0 - z * z)
    ph = 2 * np.pi * u[:, 1]
    wi = np.stack([s * np.cos(ph), s * np.sin(ph), z], 1)
    return brdf.pdf_many(mat, wi, wo, N, lobe).mean() * 2 * np.pi


def ggx_chi_square(rough, n_samples, rng, mu=0.8, n_phi=64, n_cos=16, sub=48):
    """Chi-square p-value of GGX samples against pdf_ggx on (phi, cos theta) bins.

    Directions rejected by the sampler (below the horizon) form an extra bin
    whose expected mass is 1 - integral of the pdf.
    """
    mat = (1.0, 1.0, 1.0, rough, 0.0)
    wo = wo_at(mu)
    wi, _, ok = brdf.sample_many(mat, wo, N, rng.random((n_samples, 2)), "ggx")
    w = wi[ok]
    cbin = np.minimum((w[:, 2] * n_cos).astype(int), n_cos - 1)
    phi = np.mod(np.arctan2(w[:, 1], w[:, 0]), 2 * np.pi)
    pbin = np.minimum((phi / (2 * np.pi) * n_phi).astype(int), n_phi - 1)
    observed = np.bincount(cbin * n_phi + pbin, minlength=n_cos * n_phi).astype(float)

    # expected mass per bin by a sub x sub midpoint rule in each bin
    expected = np.empty(n_cos * n_phi)
    g = (np.arange(sub) + 0.5) / sub
    for c in range(n_cos):
        z = (c + g) / n_cos
        for p in range(n_phi):
            ph = (p + g) * 2 * np.pi / n_phi
            Z, P = np.meshgrid(z, ph, indexing="ij")
            s = np.sqrt(1 - Z * Z)
            d = np.stack([s * np.cos(P), s * np.sin(P), Z], -1).reshape(-1, 3)
            expected[c * n_phi + p] = brdf.pdf_many(mat, d, wo, N, "ggx").mean() * (2 * np.pi / n_phi) / n_cos
    rejected_mass = max(0.0, 1.0 - expected.sum())
    exp = np.append(expected, rejected_mass) * n_samples
    obs = np.append(observed, (~ok).sum())
    # pool sparse bins so the chi-square approximation holds
    order = np.argsort(exp)
    pooled_e, pooled_o = [], []
    acc_e = acc_o = 0.0
    for i in order:
        acc_e += exp[i]
        acc_o += obs[i]
        if acc_e >= 5.0:
            pooled_e.append(acc_e)
            pooled_o.append(acc_o)
            acc_e = acc_o = 0.0
    if acc_e > 0 and pooled_e:
        pooled_e[-1] += acc_e
        pooled_o[-1] += acc_o
    pe, po = np.array(pooled_e), np.array(pooled_o)
    pe *= po.sum() / pe.sum()
    chi2 = float(((po - pe) ** 2 / pe).sum())
    return float(stats.chi2.sf(chi2, len(pe) - 1)), rejected_mass
