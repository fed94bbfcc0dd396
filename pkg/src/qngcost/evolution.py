"""Natural-gradient descent with per-iteration shot-cost diagnostics, and the
qubit-count scan of the metric-to-gradient cost ratio."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .allocation import DegenerateInput, exact_uniform_requirements, overhead_report
from .ansatz import AnsatzCircuit, build_layered_ansatz, prepare_state
from .estimator import PROTOCOLS, MetricEstimate, estimate_metric, gradient_matrix_elements
from .pauli import PauliSum, build_hamiltonian, grouping_factor, spc_of_hamiltonian
from .propagation import RegularizedInverse, propagation_coefficients, regularized_inverse
from .shots import substream
from .statevector import expectation

TRACE_HEADER = ("t", "energy", "grad_norm", "natgrad_norm", "kappa_uniform", "kappa_optimal", "n_f", "n_g", "n_opt", "spc_inv")
CHECKS_HEADER = (
    "t", "y", "kappa_approx", "kappa_relative", "kappa_bound", "n_f_bound", "n_g_bound",
    "inverse_bounds_ok", "n_f_ok", "n_g_ok", "kappa_ok",
)
SCAN_HEADER = ("n", "instance", "ratio")
AGGREGATE_HEADER = ("n", "mean", "std", "count", "excluded")
INIT_MODES = ("explicit", "random", "near_optimum")
EPS_MODES = ("absolute", "relative")
DIVERGENCE_RUN = 20
ED_MAX_QUBITS = 10
MAX_HALVINGS = 30


class EvolutionError(RuntimeError):
    pass


@dataclass
class EvolutionConfig:
    n: int = 4
    pattern: str = "B1B2B2"
    hamiltonian: str = "chain"
    j: float = 1.0
    omega: list | None = None
    omega_seed: int | None = None
    eta: float = 0.1
    lam: float = 0.2
    max_iters: int = 50
    fisher_protocol: str = "pure_abc"
    grouping: str = "per_term"
    f_F: float = 2.0
    eps_mode: str = "absolute"
    eps_value: float = 0.01
    seed: int = 0
    init: str = "random"
    theta0: list | None = None
    init_scale: float = 0.1
    pre_steps: int = 200
    pre_lr: float = 0.1

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.eta < 0:
            raise ValueError("eta must be non-negative")
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")
        if self.eps_mode not in EPS_MODES:
            raise ValueError(f"eps mode must be one of {EPS_MODES}")
        if not self.eps_value > 0:
            raise ValueError("eps value must be positive")
        if self.init not in INIT_MODES:
            raise ValueError(f"init mode must be one of {INIT_MODES}")
        if self.init == "explicit" and self.theta0 is None:
            raise ValueError("explicit init needs theta0")
        if self.fisher_protocol not in PROTOCOLS:
            raise ValueError(f"fisher protocol must be one of {PROTOCOLS}")

    def circuit(self) -> AnsatzCircuit:
        return build_layered_ansatz(self.n, self.pattern)

    def build_hamiltonian(self) -> PauliSum:
        seed = self.omega_seed
        if self.omega is None and seed is None:
            seed = int(substream(self.seed, "omega").integers(2**63))
        return build_hamiltonian(self.hamiltonian, self.n, j=self.j, omega=self.omega, seed=seed)


@dataclass(frozen=True)
class TraceRecord:
    t: int
    theta: np.ndarray
    energy: float
    grad_norm: float
    natgrad_norm: float
    kappa_uniform: float
    kappa_optimal: float
    n_f: float
    n_g: float
    n_opt: float
    spc_inv: float
    y: float
    kappa_approx: float
    kappa_relative: float
    kappa_bound: float
    n_f_bound: float
    n_g_bound: float
    inverse_bounds_ok: bool
    n_f_ok: bool
    n_g_ok: bool
    kappa_ok: bool


@dataclass
class EvolutionTrace:
    records: list[TraceRecord] = field(default_factory=list)
    diverged: bool = False
    ground_energy: float | None = None
    final_theta: np.ndarray | None = None

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    @property
    def violations(self) -> int:
        return sum(not (r.inverse_bounds_ok and r.n_f_ok and r.n_g_ok and r.kappa_ok) for r in self.records)

    def to_csv(self) -> str:
        return _csv(TRACE_HEADER, ([getattr(r, k) for k in TRACE_HEADER] for r in self.records))

    def checks_csv(self) -> str:
        return _csv(CHECKS_HEADER, ([getattr(r, k) for k in CHECKS_HEADER] for r in self.records))


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(x) for x in row])
    return buf.getvalue()


def step(theta, m: MetricEstimate, inv: RegularizedInverse | np.ndarray, lam: float) -> np.ndarray:
    """theta - lam * F~^-1 g."""
    theta = np.asarray(theta, dtype=float)
    mat = inv.matrix if isinstance(inv, RegularizedInverse) else np.asarray(inv, dtype=float)
    if mat.shape != (theta.shape[0], theta.shape[0]) or m.grad.shape != theta.shape:
        raise ValueError("theta, gradient and inverse shapes are inconsistent")
    out = theta - lam * (mat @ m.grad)
    if not np.all(np.isfinite(out)):
        bad = np.flatnonzero(~np.isfinite(out))
        raise EvolutionError(f"non-finite parameters after step at indices {bad.tolist()}")
    return out


def exact_gradient(c: AnsatzCircuit, theta, h: PauliSum) -> np.ndarray:
    return -gradient_matrix_elements(c, theta, h) @ h.coefficients


def ground_energy(h: PauliSum) -> float | None:
    if h.qubit_count > ED_MAX_QUBITS:
        return None
    return float(np.linalg.eigvalsh(h.to_dense())[0])


def initial_theta(config: EvolutionConfig, c: AnsatzCircuit, h: PauliSum) -> np.ndarray:
    nu = c.parameter_count
    if config.init == "explicit":
        theta = np.asarray(config.theta0, dtype=float)
        if theta.shape != (nu,):
            raise ValueError(f"theta0 has length {theta.size}, circuit has {nu} parameters")
        return theta
    rng = substream(config.seed, "theta0")
    theta = rng.uniform(0.0, 2 * np.pi, nu)
    if config.init == "random":
        return theta
    # near_optimum: classical pre-optimization, then a controlled kick
    for _ in range(config.pre_steps):
        theta = theta - config.pre_lr * exact_gradient(c, theta, h)
    return theta + config.init_scale * rng.standard_normal(nu)


def _precisions(config: EvolutionConfig, g: np.ndarray, v: np.ndarray) -> tuple[float, float]:
    if config.eps_mode == "absolute":
        return config.eps_value, config.eps_value
    return config.eps_value * float(np.linalg.norm(v)), config.eps_value * float(np.linalg.norm(g))


def diagnose(config: EvolutionConfig, t: int, theta, m: MetricEstimate, inv: RegularizedInverse, f_g: float, spc_h: float) -> TraceRecord:
    coeffs = propagation_coefficients(inv, m.grad)
    g_norm = float(np.linalg.norm(m.grad))
    v_norm = float(np.linalg.norm(coeffs.v))
    eps_v, eps_g = _precisions(config, m.grad, coeffs.v)
    nan = float("nan")
    values = dict(kappa_uniform=nan, kappa_optimal=nan, n_f=nan, n_g=nan, n_opt=nan, y=nan,
                  kappa_approx=nan, kappa_relative=nan, kappa_bound=nan, n_f_bound=nan, n_g_bound=nan,
                  n_f_ok=True, n_g_ok=True, kappa_ok=True)
    if eps_v > 0 and eps_g > 0:
        try:
            rep = overhead_report(m, inv, eps_v, config.f_F, f_g, spc_h, eps_grad=eps_g, coeffs=coeffs)
        except DegenerateInput:
            rep = None
        if rep is not None:
            values.update(
                kappa_uniform=rep.kappa,
                kappa_optimal=rep.kappa_optimal,
                n_f=rep.n_f,
                n_g=rep.n_g,
                n_opt=rep.n_opt,
                y=rep.y,
                kappa_approx=rep.kappa_approx,
                kappa_relative=rep.kappa_same * (g_norm / v_norm) ** 2 if v_norm > 0 else nan,
                kappa_bound=rep.kappa_bound,
                n_f_bound=rep.n_f_bound,
                n_g_bound=rep.n_g_bound,
                n_f_ok=rep.n_f <= rep.n_f_bound * (1 + 1e-9),
                n_g_ok=rep.n_g <= rep.n_g_bound * (1 + 1e-9),
                kappa_ok=rep.kappa_holds and rep.gradient_ratio_holds,
            )
    return TraceRecord(
        t=t,
        theta=np.array(theta, dtype=float),
        energy=m.energy,
        grad_norm=g_norm,
        natgrad_norm=v_norm,
        spc_inv=float(np.sum(inv.matrix**2) / inv.nu),
        inverse_bounds_ok=inv.bounds_hold(),
        **values,
    )


def run(config: EvolutionConfig, workers: int = 1, theta0=None) -> EvolutionTrace:
    """Iterate estimate, invert, diagnose, step for ``max_iters`` iterations.

    Divergence (20 consecutive energy increases) is flagged and the run
    continues. With fewer than 11 qubits every energy is checked against
    exact diagonalization.
    """
    c = config.circuit()
    h = config.build_hamiltonian()
    theta = initial_theta(config, c, h) if theta0 is None else np.asarray(theta0, dtype=float)
    f_g = float(grouping_factor(h, config.grouping))
    spc_h = spc_of_hamiltonian(h)
    trace = EvolutionTrace(ground_energy=ground_energy(h))
    rising = 0
    last = math.inf
    for t in range(config.max_iters):
        m = estimate_metric(c, theta, h, config.fisher_protocol, workers=workers)
        if trace.ground_energy is not None and m.energy < trace.ground_energy - 1e-8:
            raise EvolutionError(f"energy {m.energy} below exact ground energy {trace.ground_energy} at t={t}")
        inv = regularized_inverse(m.fisher, config.eta, check=False)
        trace.records.append(diagnose(config, t, theta, m, inv, f_g, spc_h))
        rising = rising + 1 if m.energy > last else 0
        if rising >= DIVERGENCE_RUN:
            trace.diverged = True
        last = m.energy
        theta = step(theta, m, inv, config.lam)
    trace.final_theta = theta
    return trace


@dataclass(frozen=True)
class ScanResult:
    rows: list[tuple[int, int, float]]
    excluded: dict[int, int]

    def aggregate(self) -> list[tuple[int, float, float, int, int]]:
        out = []
        for n in sorted({r[0] for r in self.rows} | set(self.excluded)):
            vals = np.array([r[2] for r in self.rows if r[0] == n])
            mean = float(vals.mean()) if vals.size else float("nan")
            std = float(vals.std()) if vals.size else float("nan")
            out.append((n, mean, std, int(vals.size), int(self.excluded.get(n, 0))))
        return out

    def mean(self, n: int) -> float:
        return next(row[1] for row in self.aggregate() if row[0] == n)

    def to_csv(self) -> str:
        return _csv(SCAN_HEADER, self.rows)

    def aggregate_csv(self) -> str:
        return _csv(AGGREGATE_HEADER, self.aggregate())


def _energy(c: AnsatzCircuit, theta, h: PauliSum) -> float:
    return expectation(prepare_state(c, theta), h)


def _scan_instance(kind, n, instance, seed, pattern, eta, lam, target, max_iters, protocol) -> float | None:
    c = build_layered_ansatz(n, pattern)
    omega_seed = int(substream(seed, "omega", n, instance).integers(2**63))
    h = build_hamiltonian(kind, n, seed=omega_seed)
    theta = substream(seed, "theta0", n, instance).uniform(0.0, 2 * np.pi, c.parameter_count)
    rate = lam
    for _ in range(max_iters + 1):
        m = estimate_metric(c, theta, h, protocol)
        inv = regularized_inverse(m.fisher, eta, check=False)
        coeffs = propagation_coefficients(inv, m.grad)
        if np.linalg.norm(coeffs.v) <= target:
            # the ratio does not depend on eps, any positive value works
            n_f, n_g = exact_uniform_requirements(coeffs, m.var_fisher, m.var_grad, 1.0)
            return n_f / n_g if n_g > 0 else None
        # backtracking keeps large-norm Hamiltonians from overshooting
        for _ in range(MAX_HALVINGS):
            trial = step(theta, m, inv, rate)
            if _energy(c, trial, h) <= m.energy:
                break
            rate /= 2
        theta = trial
        rate = min(lam, 2 * rate)
    return None


def qubit_scan(
    kind: str,
    n_list,
    target: float = 0.1,
    instances: int = 10,
    seed: int = 0,
    pattern: str = "B1B2B2",
    eta: float = 0.1,
    lam: float = 0.2,
    max_iters: int = 1000,
    protocol: str = "pure_abc",
    workers: int = 1,
) -> ScanResult:
    """N_F / N_g at the first point where ||v|| <= target, per (N, instance).

    Each instance draws its own random theta0 and on-site fields from named
    substreams of ``seed``. Steps of size ``lam`` are halved until the energy
    does not rise, then allowed to grow back. Instances that do not reach the target within
    ``max_iters`` steps are excluded and counted.
    """
    if instances < 1:
        raise ValueError("need at least one instance")
    jobs = [(int(n), i) for n in n_list for i in range(instances)]

    def work(job):
        n, i = job
        return _scan_instance(kind, n, i, seed, pattern, eta, lam, target, max_iters, protocol)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(j) for j in jobs]
    rows, excluded = [], {}
    for (n, i), ratio in zip(jobs, results):
        if ratio is None:
            excluded[n] = excluded.get(n, 0) + 1
        else:
            rows.append((n, i, ratio))
    for n, _ in jobs:
        excluded.setdefault(n, 0)
    return ScanResult(rows=rows, excluded=excluded)


def config_dict(config: EvolutionConfig) -> dict:
    return asdict(config)
