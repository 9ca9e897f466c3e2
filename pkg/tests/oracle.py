"""Brute-force LP oracle: enumerate basic feasible points directly.

Only usable on small problems (the candidate count is combinatorial);
deliberately independent of the simplex code path, so it can certify
solver results and optimum uniqueness.
"""

from itertools import combinations

import numpy as np
import scipy.sparse as sp

from maskdispatch.lp import LpProblem, NONNEG


def _dense(a):
    return a.toarray() if sp.issparse(a) else np.asarray(a, dtype=float)


def enumerate_vertices(problem: LpProblem, tol=1e-8):
    """All basic feasible points: every nonsingular active set of size n."""
    n = problem.n_vars
    A_eq = _dense(problem.A_eq)
    b_eq = np.asarray(problem.b_eq, dtype=float)
    rows = [_dense(problem.A_in)] if problem.A_in.shape[0] else []
    rhs = [np.asarray(problem.b_in, dtype=float)] if problem.A_in.shape[0] else []
    for j, s in enumerate(problem.sign_class):
        if s == NONNEG:
            e = np.zeros((1, n))
            e[0, j] = -1.0
            rows.append(e)
            rhs.append(np.zeros(1))
    G = np.vstack(rows) if rows else np.zeros((0, n))
    h = np.concatenate(rhs) if rhs else np.zeros(0)

    need = n - A_eq.shape[0]
    if need < 0:
        need = 0
    vertices = []
    for subset in combinations(range(G.shape[0]), need):
        M = np.vstack([A_eq, G[list(subset), :]])
        v = np.concatenate([b_eq, h[list(subset)]])
        if M.shape[0] != n or np.linalg.matrix_rank(M) < n:
            continue
        try:
            x = np.linalg.solve(M, v)
        except np.linalg.LinAlgError:
            continue
        feas_eq = np.max(np.abs(A_eq @ x - b_eq), initial=0.0)
        feas_in = np.max(G @ x - h, initial=0.0) if G.shape[0] else 0.0
        if feas_eq <= tol and feas_in <= tol:
            vertices.append(x)
    return vertices


def best_vertex_objective(problem: LpProblem, tol=1e-8):
    """Optimal objective over all vertices, or None when none exist."""
    vertices = enumerate_vertices(problem, tol)
    if not vertices:
        return None
    values = [problem.objective_at(x) for x in vertices]
    return min(values) if problem.sense == "min" else max(values)


def certify_unique_optimum(problem: LpProblem, tol=1e-6):
    """True when exactly one distinct vertex attains the optimum."""
    vertices = enumerate_vertices(problem)
    if not vertices:
        return False
    values = np.array([problem.objective_at(x) for x in vertices])
    best = values.min() if problem.sense == "min" else values.max()
    winners = [x for x, v in zip(vertices, values) if abs(v - best) <= tol]
    distinct = []
    for x in winners:
        if not any(np.max(np.abs(x - y)) <= 1e-7 for y in distinct):
            distinct.append(x)
    return len(distinct) == 1
