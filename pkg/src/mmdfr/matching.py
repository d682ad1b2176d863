"""Signature matching: cosine similarity, PCA and the Joint Bayesian log-likelihood ratio."""

import logging
from dataclasses import dataclass, field

import numpy as np

from mmdfr.binio import Reader, Writer
from mmdfr.errors import DataError, DimensionError, FitError

log = logging.getLogger(__name__)

DEFAULT_PCA_DIM = 110


# -- PCA ---------------------------------------------------------------------

@dataclass
class PCAModel:
    mean: np.ndarray  # (D,)
    basis: np.ndarray  # (D, k), orthonormal columns
    eigenvalues: np.ndarray  # (k,), non-increasing
    whiten: bool = False

    @property
    def dim(self):
        return self.basis.shape[1]

    def project(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != len(self.mean):
            raise DimensionError(f"PCA expects {len(self.mean)}-dim input, got {x.shape[-1]}")
        y = (x - self.mean) @ self.basis
        if self.whiten:
            y = y / np.sqrt(self.eigenvalues)
        return y

    def reconstruct(self, y):
        y = np.asarray(y, dtype=np.float64)
        if self.whiten:
            y = y * np.sqrt(self.eigenvalues)
        return y @ self.basis.T + self.mean


def pca_fit(features, dim=DEFAULT_PCA_DIM, whiten=False):
    """Top-``dim`` eigenvectors of the sample covariance."""
    x = np.asarray(features, dtype=np.float64)
    n, d = x.shape
    if dim > d:
        raise FitError(f"PCA dimension {dim} exceeds the input dimension {d}")
    if n <= dim:
        raise FitError(f"PCA to {dim} dims needs more than {dim} samples, got {n}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    tol = max(evals[0], 0.0) * d * np.finfo(np.float64).eps * 10
    rank = int(np.sum(evals > tol))
    if dim > rank:
        raise FitError(f"PCA dimension {dim} exceeds the data rank {rank}")
    basis = evecs[:, :dim]
    # deterministic sign: largest-magnitude entry of each column positive
    flip = np.sign(basis[np.argmax(np.abs(basis), axis=0), np.arange(dim)])
    basis = basis * flip
    return PCAModel(mean, basis, evals[:dim].copy(), whiten)


def pca_reestimate_mean(model, features):
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise DataError("mean re-estimation needs at least one feature vector")
    return PCAModel(x.mean(axis=0), model.basis, model.eigenvalues, model.whiten)


def pca_project(model, x):
    return model.project(x)


# -- cosine -----------------------------------------------------------------

def cosine_similarity(y1, y2):
    """Row-wise cosine similarity; 1-D inputs give a float."""
    a = np.asarray(y1, dtype=np.float64)
    b = np.asarray(y2, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"cannot compare shapes {a.shape} and {b.shape}")
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    if np.any(na == 0) or np.any(nb == 0):
        raise DataError("cosine similarity of a zero vector is undefined")
    s = np.clip((a * b).sum(axis=-1) / (na * nb), -1.0, 1.0)
    return float(s) if s.ndim == 0 else s


def cosine_matrix(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    if np.any(na == 0) or np.any(nb == 0):
        raise DataError("cosine similarity of a zero vector is undefined")
    return np.clip((a / na) @ (b / nb).T, -1.0, 1.0)


# -- Joint Bayesian ----------------------------------------------------------

@dataclass
class JBModel:
    """Identity covariance ``S_mu`` and intra-personal covariance ``S_eps``.

    ``A``, ``G`` and ``c`` are chosen so that
    ``r(x1, x2) = x1'A x1 + x2'A x2 - 2 x1'G x2 + c`` equals the exact
    log-likelihood ratio of the same- vs different-identity Gaussians.
    """

    S_mu: np.ndarray
    S_eps: np.ndarray
    A: np.ndarray = None
    G: np.ndarray = None
    c: float = 0.0
    loglik: list = field(default_factory=list)

    def __post_init__(self):
        if self.A is None:
            self.A, self.G, self.c = score_matrices(self.S_mu, self.S_eps)

    @property
    def dim(self):
        return self.S_mu.shape[0]


def _sym(m):
    return (m + m.T) / 2


def score_matrices(S_mu, S_eps):
    """Closed form by block inversion.

    The same-identity joint covariance is ``I2 (x) E + J2 (x) M``; its inverse
    is ``[[F + G, G], [G, F + G]]`` with ``F = E^-1`` and
    ``G = -(E + 2M)^-1 M E^-1``.
    """
    M = np.asarray(S_mu, dtype=np.float64)
    E = np.asarray(S_eps, dtype=np.float64)
    T = M + E
    E_inv = np.linalg.inv(E)
    G = _sym(-np.linalg.solve(E + 2 * M, M) @ E_inv)
    F = E_inv
    A = _sym(np.linalg.inv(T) - (F + G))
    _, logdet_T = np.linalg.slogdet(T)
    _, logdet_E = np.linalg.slogdet(E)
    _, logdet_E2M = np.linalg.slogdet(E + 2 * M)
    # -1/2 log|Sigma_I| + 1/2 log|Sigma_E|, with |Sigma_I| = |E| |E + 2M|
    c = float(-0.5 * (logdet_E + logdet_E2M) + logdet_T)
    return 0.5 * A, 0.5 * G, c


def jb_score(model, y1, y2):
    """Row-wise log-likelihood ratio; exactly symmetric in its arguments."""
    x1 = np.atleast_2d(np.asarray(y1, dtype=np.float64))
    x2 = np.atleast_2d(np.asarray(y2, dtype=np.float64))
    if x1.shape != x2.shape or x1.shape[1] != model.dim:
        raise DimensionError(f"JB model is {model.dim}-dim; got {x1.shape} and {x2.shape}")
    q1 = ((x1 @ model.A) * x1).sum(axis=1)
    q2 = ((x2 @ model.A) * x2).sum(axis=1)
    # 2 x1'G x2 written as two mirrored terms so swapping arguments is bitwise neutral
    cross = ((x1 @ model.G) * x2).sum(axis=1) + ((x2 @ model.G) * x1).sum(axis=1)
    r = (q1 + q2) - cross + model.c
    return float(r[0]) if np.ndim(y1) == 1 else r


def jb_score_matrix(model, a, b):
    """Scores between every row of ``a`` and every row of ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    qa = ((a @ model.A) * a).sum(axis=1)
    qb = ((b @ model.A) * b).sum(axis=1)
    return qa[:, None] + qb[None, :] - 2.0 * (a @ model.G @ b.T) + model.c


def _gauss_logpdf(x, cov):
    d = len(x)
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        raise FitError("joint covariance is not positive definite")
    sol = np.linalg.solve(cov, x)
    return -0.5 * (d * np.log(2 * np.pi) + logdet + x @ sol)


def jb_oracle_score(model, y1, y2):
    """Reference score from explicit 2d x 2d joint Gaussian densities."""
    M, E = model.S_mu, model.S_eps
    x = np.concatenate([np.asarray(y1, np.float64), np.asarray(y2, np.float64)])
    T = M + E
    same = np.block([[T, M], [M, T]])
    diff = np.block([[T, np.zeros_like(M)], [np.zeros_like(M), T]])
    return float(_gauss_logpdf(x, same) - _gauss_logpdf(x, diff))


def _group(features, labels):
    x = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    _, inv = np.unique(labels, return_inverse=True)
    groups = [x[inv == g] for g in range(inv.max() + 1)] if len(x) else []
    return x, groups


def _regularize(S, name):
    d = S.shape[0]
    S = _sym(S)
    evals = np.linalg.eigvalsh(S)
    if evals[-1] <= 0 or evals[0] <= 0 or evals[-1] / evals[0] > 1e10:
        ridge = 1e-4 * max(np.trace(S), 1e-12) / d
        log.debug("regularizing %s with ridge %.3g", name, ridge)
        S = S + ridge * np.eye(d)
    return S


def jb_loglik(groups, S_mu, S_eps):
    """Marginal log-likelihood of grouped data under ``x = mu + eps``."""
    M, E = S_mu, S_eps
    d = M.shape[0]
    E_inv = np.linalg.inv(E)
    _, logdet_E = np.linalg.slogdet(E)
    total = 0.0
    cache = {}
    for g in groups:
        m = len(g)
        if m not in cache:
            K = E + m * M
            _, logdet_K = np.linalg.slogdet(K)
            C = -np.linalg.solve(K, M) @ E_inv
            cache[m] = ((m - 1) * logdet_E + logdet_K, C)
        logdet, C = cache[m]
        s = g.sum(axis=0)
        quad = np.einsum("ij,jk,ik->", g, E_inv, g) + s @ C @ s
        total += -0.5 * (m * d * np.log(2 * np.pi) + logdet + quad)
    return float(total)


def jb_fit(features, labels, max_iters=100, tol=1e-5):
    """EM estimation of ``S_mu`` and ``S_eps``; features should be zero-mean.

    E-step: posterior mean and covariance of each subject's identity vector;
    M-step: covariances re-estimated from those moments.
    """
    x, groups = _group(features, labels)
    if len(groups) < 2:
        raise FitError("Joint Bayesian needs at least two subjects")
    if not any(len(g) >= 2 for g in groups):
        raise FitError("Joint Bayesian needs subjects with at least two samples each "
                       "(identity and noise covariances are otherwise unidentifiable)")
    d = x.shape[1]
    n_total = len(x)
    means = np.array([g.mean(axis=0) for g in groups])
    S_mu = np.cov(means, rowvar=False, bias=True).reshape(d, d)
    within = np.concatenate([g - g.mean(axis=0) for g in groups if len(g) >= 2])
    S_eps = within.T @ within / len(within)
    S_mu = _regularize(S_mu, "S_mu")
    S_eps = _regularize(S_eps, "S_eps")

    history = [jb_loglik(groups, S_mu, S_eps)]
    for it in range(max_iters):
        E_inv = np.linalg.inv(S_eps)
        mu_outer = np.zeros((d, d))
        eps_outer = np.zeros((d, d))
        post = {}
        for g in groups:
            m = len(g)
            if m not in post:
                post[m] = _sym(np.linalg.inv(np.linalg.inv(S_mu) + m * E_inv))
            cov = post[m]
            mu = cov @ (E_inv @ g.sum(axis=0))
            mu_outer += np.outer(mu, mu) + cov
            r = g - mu
            eps_outer += r.T @ r + m * cov
        new_mu = _regularize(mu_outer / len(groups), "S_mu")
        new_eps = _regularize(eps_outer / n_total, "S_eps")
        change = max(np.linalg.norm(new_mu - S_mu) / max(np.linalg.norm(S_mu), 1e-300),
                     np.linalg.norm(new_eps - S_eps) / max(np.linalg.norm(S_eps), 1e-300))
        S_mu, S_eps = new_mu, new_eps
        history.append(jb_loglik(groups, S_mu, S_eps))
        if change < tol:
            break
    if not (np.all(np.isfinite(S_mu)) and np.all(np.isfinite(S_eps))):
        raise FitError("Joint Bayesian EM produced non-finite covariances")
    try:
        model = JBModel(S_mu, S_eps)
    except np.linalg.LinAlgError as exc:
        raise FitError(f"Joint Bayesian score matrices are singular: {exc}") from None
    model.loglik = history
    return model


# -- checkpoints --------------------------------------------------------------
# "MMPC": u32 version, u32 input dim, u32 k, u32 whiten flag, mean, basis, eigenvalues (float64)
# "MMJB": u32 version, u32 dim, S_mu, S_eps, A, G (float64), then the constant c as a 1-element array

PCA_MAGIC = b"MMPC"
JB_MAGIC = b"MMJB"
VERSION = 1


def save_pca(model, path):
    w = Writer(PCA_MAGIC)
    w.u32(VERSION)
    w.u32(len(model.mean))
    w.u32(model.dim)
    w.u32(int(model.whiten))
    w.array(model.mean, np.float64)
    w.array(model.basis, np.float64)
    w.array(model.eigenvalues, np.float64)
    w.save(path)


def load_pca(path):
    r = Reader.open(path, PCA_MAGIC)
    r.version({VERSION})
    d, k, whiten = r.u32(), r.u32(), bool(r.u32())
    mean, basis, evals = r.array(np.float64), r.array(np.float64), r.array(np.float64)
    r.done()
    if mean.shape != (d,) or basis.shape != (d, k) or evals.shape != (k,):
        from mmdfr.errors import FormatError
        raise FormatError(f"{path}: array shapes disagree with the header")
    return PCAModel(mean, basis, evals, whiten)


def save_jb(model, path):
    w = Writer(JB_MAGIC)
    w.u32(VERSION)
    w.u32(model.dim)
    for m in (model.S_mu, model.S_eps, model.A, model.G):
        w.array(m, np.float64)
    w.array(np.array([model.c]), np.float64)
    w.save(path)


def load_jb(path):
    r = Reader.open(path, JB_MAGIC)
    r.version({VERSION})
    d = r.u32()
    S_mu, S_eps, A, G = (r.array(np.float64) for _ in range(4))
    c = r.array(np.float64)
    r.done()
    if any(m.shape != (d, d) for m in (S_mu, S_eps, A, G)) or c.shape != (1,):
        from mmdfr.errors import FormatError
        raise FormatError(f"{path}: array shapes disagree with the header")
    return JBModel(S_mu, S_eps, A, G, float(c[0]))
