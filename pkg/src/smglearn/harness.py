"""Round-by-round continual-learning runs over a synthetic site stream.

A run directory holds::

    manifest.json          config echo, completed rounds, access audit, timing
    metrics.csv            AccuracyMatrix (every site, val + test, every round)
    alignment.csv          per-logged-iteration gradient inner products/cosines
    train_log.csv          losses, grad norms and step wall-time
    round_<t>.ckpt         params at the end of round t (float32 checkpoint)
    buffer_round_<t>.json  replay buffer after round t
    ft_reference.json      written by :func:`run_ft_reference`
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from smglearn import __version__, model, replay
from smglearn._backend import BACKEND
from smglearn.access import AccessLog, SubjectPool
from smglearn.dualmeta import LOG_FIELDS, MetaStepConfig, train_round
from smglearn.errors import ConfigError, IntegrityError, ProtocolError
from smglearn.metrics import (METRICS, AccuracyMatrix, backward_measure,
                              backward_transfer, evaluate_subjects, forward_measure,
                              forward_transfer)
from smglearn.sitegen import SiteDataset, default_stream, generate_stream


@dataclass(frozen=True)
class MethodSpec:
    mode: str          # train_round mode for rounds with a buffer
    orient: bool       # gamma active
    arbitrary: bool    # beta active
    buffered: bool
    hybrid: bool       # select exemplars by R + lam*V instead of R alone


METHODS = {
    "finetune": MethodSpec("plain", False, False, False, False),
    "jm": MethodSpec("dual", False, False, True, False),
    "sga-orient": MethodSpec("dual", True, False, True, False),
    "sga-arbitrary": MethodSpec("dual", False, True, True, False),
    "sga": MethodSpec("dual", True, True, True, False),
    "sga-c": MethodSpec("dual", True, True, True, True),
    "sga-direct": MethodSpec("direct", True, True, True, False),
}


@dataclass
class RunConfig:
    method: str = "sga-c"
    n_sites: int = 6
    stream: list = field(default_factory=lambda: [1, 2, 3, 4, 5])
    held_out: int = 6
    gamma: float = 5e-4
    beta: float = 5e-4
    lam: float = 1.0
    n_e: int = 2
    meta_lr: float = 5e-4
    batch_size: int = 5
    iterations: int = 2000
    data_seed: int = 0
    init_seed: int = 0
    train_seed: int = 0
    recompute_features: bool = False
    log_every: int = 10
    alignment_probe: bool = False

    def __post_init__(self):
        self.stream = [int(s) for s in self.stream]
        self.validate()

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {sorted(METHODS)}")
        sites = set(range(1, self.n_sites + 1))
        if not self.stream or len(set(self.stream)) != len(self.stream):
            raise ConfigError("stream must be a non-empty list of distinct site ids")
        if not set(self.stream) <= sites:
            raise ConfigError(f"stream {self.stream} references sites outside 1..{self.n_sites}")
        if self.held_out in self.stream:
            raise ConfigError(f"held-out site {self.held_out} must not be in the stream")
        if self.held_out not in sites:
            raise ConfigError(f"held-out site {self.held_out} outside 1..{self.n_sites}")
        if self.iterations < 1 or self.batch_size < 1 or self.n_e < 1:
            raise ConfigError("iterations, batch_size and n_e must be >= 1")
        MetaStepConfig(self.gamma, self.beta, self.meta_lr)

    @property
    def spec(self) -> MethodSpec:
        return METHODS[self.method]

    def step_config(self) -> MetaStepConfig:
        s = self.spec
        return MetaStepConfig(gamma=self.gamma if s.orient else 0.0,
                              beta=self.beta if s.arbitrary else 0.0,
                              meta_lr=self.meta_lr)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc


@dataclass
class RunResult:
    config: RunConfig
    matrix: AccuracyMatrix
    params: np.ndarray
    buffer: replay.ReplayBuffer
    manifest: dict
    access: AccessLog
    out_dir: Optional[Path] = None


def build_datasets(config: RunConfig) -> dict[int, SiteDataset]:
    return generate_stream(default_stream(config.n_sites, config.data_seed))


def _write_json(path: Path, obj) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True))
    tmp.replace(path)


def _write_rows(path: Path, fieldnames, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n",
                           extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def _read_rows(path: Path) -> list[dict]:
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


ALIGN_FIELDS = ("round", "iteration", "dot_dp", "dot_ctrcte", "cos_dp", "cos_ctrcte")
TRAIN_FIELDS = ("round",) + LOG_FIELDS


def _evaluate_round(matrix, params, datasets, t, log):
    with log.context("eval", t):
        for sid in sorted(datasets):
            for split in ("val", "test"):
                subjects = datasets[sid].split(split)
                log.record(subjects)
                matrix.set(t, sid, split, evaluate_subjects(params, subjects))


def _audit_round(log: AccessLog, t: int, site_id: int, buffer_before) -> dict:
    prev = log.previous_site_reads("train", t, site_id)
    allowed = {s.key: s.nbytes for s in buffer_before.subjects()} if buffer_before else {}
    illegal = sorted(k for k in prev if k not in allowed)
    if illegal:
        raise ProtocolError(
            f"round {t}: training read non-exemplar previous-site subjects {illegal[:5]}"
        )
    return {
        "round": t,
        "previous_site_subjects_read": sorted([list(k) for k in prev]),
        "previous_site_bytes_read": int(sum(prev.values())),
        "buffer_payload_bytes": int(sum(allowed.values())),
    }


def _train_one(config: RunConfig, params, site: SiteDataset, buffer, t: int,
               log: AccessLog, iterations: int):
    spec = config.spec
    d_pool = SubjectPool(site.train, log)
    subjects = buffer.subjects() if buffer is not None else []
    p_pool = SubjectPool(subjects, log) if (spec.buffered and subjects) else None
    probe_pool = None
    if config.alignment_probe and not spec.buffered and subjects:
        probe_pool = SubjectPool(subjects, log)
    mode = spec.mode if p_pool is not None else "plain"
    rng = np.random.default_rng([config.train_seed, t])
    probe_rng = np.random.default_rng([config.train_seed, t, 1])
    with log.context("train", t):
        theta, rows = train_round(
            params, d_pool, p_pool, cfg=config.step_config(), iterations=iterations,
            rng=rng, mode=mode, batch_size=config.batch_size,
            log_every=config.log_every, probe_pool=None, probe_rng=probe_rng)
    if probe_pool is not None:
        # diagnostics for non-rehearsing methods: separate read phase, same params trajectory
        rows = _probe_rows(config, params, d_pool, probe_pool, t, log, iterations)
    for r in rows:
        r["round"] = t
    return model.round_to_checkpoint(theta), rows


def _probe_rows(config, params, d_pool, probe_pool, t, log, iterations):
    # Re-run the identical plain trajectory, reading buffer data only for logging.
    rng = np.random.default_rng([config.train_seed, t])
    probe_rng = np.random.default_rng([config.train_seed, t, 1])
    with log.context("diagnostic", t):
        _, rows = train_round(
            params, d_pool, None, cfg=config.step_config(), iterations=iterations,
            rng=rng, mode="plain", batch_size=config.batch_size,
            log_every=config.log_every, probe_pool=probe_pool, probe_rng=probe_rng)
    return rows


def _select(config: RunConfig, params, site: SiteDataset, buffer, t: int, log: AccessLog):
    with log.context("select", t):
        log.record(site.train)
        ex = replay.select_exemplars(site, params, buffer,
                                     lam=config.lam if config.spec.hybrid else 0.0,
                                     n_e=config.n_e,
                                     recompute_features=config.recompute_features)
    return replay.update_buffer(buffer, ex)


def _config_matches(a: dict, b: dict) -> bool:
    return RunConfig.from_dict(a).to_dict() == RunConfig.from_dict(b).to_dict()


def run_stream(config: RunConfig, out_dir=None, resume: bool = False,
               datasets: Optional[dict] = None) -> RunResult:
    """Train ``config.method`` over the stream, evaluating every site after each round."""
    config.validate()
    datasets = datasets or build_datasets(config)
    out = Path(out_dir) if out_dir is not None else None
    log = AccessLog()
    matrix = AccuracyMatrix()
    buffer = replay.ReplayBuffer()
    params = model.round_to_checkpoint(model.init_params(config.init_seed))
    align_rows: list = []
    train_rows: list = []
    manifest = {
        "config": config.to_dict(),
        "version": __version__,
        "backend": BACKEND,
        "layout_id": model.DEFAULT_NET.layout_id,
        "completed_rounds": 0,
        "checkpoints": {},
        "buffer_manifests": {},
        "access_audit": [],
        "timing": {},
    }
    start = 1
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        mpath = out / "manifest.json"
        if resume and mpath.exists():
            old = json.loads(mpath.read_text())
            if not _config_matches(old["config"], manifest["config"]):
                raise IntegrityError(f"{out}: existing manifest was produced by a different config")
            manifest = old
            done = manifest["completed_rounds"]
            if done:
                params = model.load_checkpoint(out / manifest["checkpoints"][str(done)])
                buffer = replay.ReplayBuffer.from_manifest(
                    json.loads((out / manifest["buffer_manifests"][str(done)]).read_text()),
                    datasets)
                full = AccuracyMatrix.from_csv(out / "metrics.csv")
                matrix = AccuracyMatrix({k: v for k, v in full.entries.items() if k[0] <= done})
                align_rows = [r for r in _read_rows(out / "alignment.csv")
                              if int(r["round"]) <= done]
                train_rows = [r for r in _read_rows(out / "train_log.csv")
                              if int(r["round"]) <= done]
            start = done + 1
        elif mpath.exists() and not resume:
            for stale in out.glob("*"):
                if stale.is_file():
                    stale.unlink()

    for t in range(start, len(config.stream) + 1):
        site = datasets[config.stream[t - 1]]
        t0 = time.perf_counter()
        buffer_before = buffer
        params, rows = _train_one(config, params, site, buffer, t, log, config.iterations)
        train_seconds = time.perf_counter() - t0
        audit = _audit_round(log, t, site.site_id, buffer_before)
        if config.spec.buffered or config.alignment_probe:
            buffer = _select(config, params, site, buffer, t, log)
        _evaluate_round(matrix, params, datasets, t, log)
        align_rows += [{k: r.get(k, "") for k in ALIGN_FIELDS} for r in rows]
        train_rows += rows
        manifest["access_audit"] = [a for a in manifest["access_audit"] if a["round"] != t]
        manifest["access_audit"].append(audit)
        manifest["timing"][str(t)] = {"train_seconds": train_seconds,
                                      "seconds_per_iteration": train_seconds / config.iterations}
        if out is not None:
            ck = f"round_{t}.ckpt"
            model.save_checkpoint(out / ck, params)
            bm = f"buffer_round_{t}.json"
            _write_json(out / bm, buffer.manifest())
            matrix.to_csv(out / "metrics.csv")
            _write_rows(out / "alignment.csv", ALIGN_FIELDS, align_rows)
            _write_rows(out / "train_log.csv", TRAIN_FIELDS, train_rows)
            manifest["checkpoints"][str(t)] = ck
            manifest["buffer_manifests"][str(t)] = bm
        manifest["completed_rounds"] = t
        if out is not None:
            _write_json(out / "manifest.json", manifest)

    manifest["summary"] = summarize(matrix, config)
    if out is not None:
        _write_json(out / "manifest.json", manifest)
    return RunResult(config, matrix, params, buffer, manifest, log, out)


def summarize(matrix: AccuracyMatrix, config: RunConfig) -> dict:
    t = len(config.stream)
    bm = backward_measure(matrix, config.stream, t)
    bt = backward_transfer(matrix, config.stream, t)
    fm = forward_measure(matrix, config.stream, config.held_out)
    out = {}
    for m in METRICS:
        out[f"BM_{m.upper()}"] = bm[m]
        out[f"BT_{m.upper()}"] = bt[m] if bt is not None else None
        out[f"FM_{m.upper()}"] = fm[m]
    return out


def run_ft_reference(run: RunResult | str | Path, iterations: Optional[int] = None,
                     datasets: Optional[dict] = None) -> dict:
    """Train one more round on the held-out site and score its test split.

    Accepts an in-memory :class:`RunResult` or a run directory.  The extra
    round uses the run's method, buffer and iteration count (unless
    ``iterations`` overrides it; 0 skips training).
    """
    if isinstance(run, RunResult):
        config, params, buffer = run.config, run.params, run.buffer
        matrix, out = run.matrix, run.out_dir
        datasets = datasets or build_datasets(config)
    else:
        out = Path(run)
        mpath = out / "manifest.json"
        if not mpath.exists():
            raise IntegrityError(f"{out}: no manifest.json")
        manifest = json.loads(mpath.read_text())
        config = RunConfig.from_dict(manifest["config"])
        final = len(config.stream)
        if manifest["completed_rounds"] != final:
            raise IntegrityError(f"{out}: run incomplete ({manifest['completed_rounds']}/{final})")
        ck = out / manifest["checkpoints"][str(final)]
        if not ck.exists():
            raise IntegrityError(f"{out}: missing checkpoint {ck.name}")
        params = model.load_checkpoint(ck)
        datasets = datasets or build_datasets(config)
        buffer = replay.ReplayBuffer.from_manifest(
            json.loads((out / manifest["buffer_manifests"][str(final)]).read_text()), datasets)
        matrix = AccuracyMatrix.from_csv(out / "metrics.csv")

    iterations = config.iterations if iterations is None else iterations
    t = len(config.stream) + 1
    site = datasets[config.held_out]
    log = AccessLog()
    if iterations > 0:
        theta, _ = _train_one(config, params, site, buffer, t, log, iterations)
    else:
        theta = params
    ref = evaluate_subjects(theta, site.test)
    reference = {"dsc": ref.dsc, "asd": ref.asd}
    fm = forward_measure(matrix, config.stream, config.held_out)
    result = {"reference": reference, "FM": fm, "FT": forward_transfer(fm, reference),
              "iterations": iterations}
    if out is not None:
        _write_json(out / "ft_reference.json", result)
    return result


SEQ_FIELDS = ("round", "site_trained", "first_site_dsc", "first_site_asd",
              "held_out_dsc", "held_out_asd", "bm_dsc", "bm_asd")


def sequence_curves(matrix: AccuracyMatrix, config: RunConfig) -> list[dict]:
    first = config.stream[0]
    rows = []
    for t in range(1, len(config.stream) + 1):
        f, u = matrix.get(t, first), matrix.get(t, config.held_out)
        bm = backward_measure(matrix, config.stream, t)
        rows.append({"round": t, "site_trained": config.stream[t - 1],
                     "first_site_dsc": f.dsc, "first_site_asd": f.asd,
                     "held_out_dsc": u.dsc, "held_out_asd": u.asd,
                     "bm_dsc": bm["dsc"], "bm_asd": bm["asd"]})
    return rows


def run_sequence_length_study(config: RunConfig, out_dir=None) -> list[dict]:
    if len(config.stream) < 3:
        raise ConfigError("sequence-length study needs a stream of at least 3 sites")
    res = run_stream(config, out_dir)
    rows = sequence_curves(res.matrix, config)
    if out_dir is not None:
        _write_rows(Path(out_dir) / "seq_study.csv", SEQ_FIELDS, rows)
    return rows


COMPARE_METRICS = tuple(f"{k}_{m}" for m in ("DSC", "ASD") for k in ("BM", "BT", "FM", "FT"))


def compare_report(run_dirs: Sequence, out_file=None) -> list[dict]:
    """One row per run with BM/BT/FM/FT x DSC/ASD plus mean alignment diagnostics."""
    if not run_dirs:
        raise ConfigError("compare needs at least one run directory")
    rows, data_keys = [], set()
    for d in run_dirs:
        d = Path(d)
        mpath = d / "manifest.json"
        if not mpath.exists():
            raise IntegrityError(f"{d}: no manifest.json")
        manifest = json.loads(mpath.read_text())
        config = RunConfig.from_dict(manifest["config"])
        data_keys.add((config.data_seed, config.n_sites, tuple(config.stream), config.held_out))
        matrix = AccuracyMatrix.from_csv(d / "metrics.csv")
        summary = summarize(matrix, config)
        ft = {"dsc": None, "asd": None}
        ftp = d / "ft_reference.json"
        if ftp.exists():
            ft = json.loads(ftp.read_text())["FT"]
        row = {"run": str(d), "method": config.method}
        for key in COMPARE_METRICS:
            kind, m = key.split("_")
            row[key] = ft[m.lower()] if kind == "FT" else summary[key]
        align = [r for r in _read_rows(d / "alignment.csv")
                 if int(r["round"]) >= 2 and r["dot_dp"] != ""]
        row["mean_dot_dp"] = float(np.mean([float(r["dot_dp"]) for r in align])) if align else None
        row["mean_dot_ctrcte"] = (float(np.mean([float(r["dot_ctrcte"]) for r in align]))
                                  if align else None)
        rows.append(row)
    if len(data_keys) > 1:
        raise IntegrityError(f"runs use different data/stream settings: {sorted(data_keys)}")
    if out_file is not None:
        out_file = Path(out_file)
        fieldnames = ["run", "method", *COMPARE_METRICS, "mean_dot_dp", "mean_dot_ctrcte"]
        _write_rows(out_file.with_suffix(".csv"), fieldnames, rows)
        _write_json(out_file.with_suffix(".json"), rows)
    return rows
