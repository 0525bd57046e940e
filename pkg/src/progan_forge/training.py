"""Progressive training schedule: stages, fade-in, checkpoints, metric logs.

An *iteration* is one optimizer step on a batch (one discriminator update
followed by one generator update). Fade-in is counted in images shown, so
a 40,000-image fade at batch 16 lasts 2,500 iterations at the start of
each stage after the first.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .adam import AdamState, adam_step
from .autodiff import Tensor, backward, no_grad
from .losses import d_loss_wgan_gp, dcgan_losses, g_loss_wgan
from .networks import Discriminator, Generator, NetworkSpec
from .tensor_io import load_tensor, save_tensor

GRID_SEED_TAG = 0x6772
MIN_RESOLUTION = 4


class TrainingDiverged(RuntimeError):
    """A loss went non-finite; the last good checkpoint is kept on disk."""


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class TrainPlan:
    stages: tuple = ((4, 2000), (8, 3000), (16, 3000), (32, 4000))
    fade_images: int = 40_000
    batch_size: int = 16
    lr: float = 0.001
    beta1: float = 0.0
    beta2: float = 0.99
    gp_lambda: float = 10.0
    drift_epsilon: float = 0.001
    checkpoint_interval: int = 48_000
    log_interval: int = 100
    seed: int = 0
    d_steps: int = 1  # discriminator updates per generator update

    def __post_init__(self):
        object.__setattr__(
            self, "stages", tuple((int(r), int(b)) for r, b in self.stages)
        )
        if not self.stages:
            raise PlanError("plan needs at least one stage")
        expected = MIN_RESOLUTION
        for res, budget in self.stages:
            if res != expected:
                raise PlanError(
                    f"stage resolutions must double starting at {MIN_RESOLUTION}; "
                    f"expected {expected}, got {res}"
                )
            if budget <= 0:
                raise PlanError(f"stage budget must be positive, got {budget}")
            expected *= 2
        if self.batch_size <= 0:
            raise PlanError(f"batch_size must be positive, got {self.batch_size}")
        if self.checkpoint_interval <= 0:
            raise PlanError("checkpoint_interval must be positive")
        if self.log_interval <= 0:
            raise PlanError("log_interval must be positive")
        if self.fade_images < 0:
            raise PlanError("fade_images must be >= 0")
        if self.d_steps < 1:
            raise PlanError("d_steps must be >= 1")

    @property
    def total_iterations(self) -> int:
        return sum(budget for _, budget in self.stages)

    @property
    def max_resolution(self) -> int:
        return self.stages[-1][0]

    def to_dict(self) -> dict:
        return asdict(self)

    def plan_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()


PAPER_STAGES = tuple(
    [(4, 48_000)]
    + [(2**k, 96_000) for k in range(3, 10)]
    + [(1024, 500_000)]
)

DESK_STAGES = ((4, 2_000), (8, 3_000), (16, 3_000), (32, 4_000))


def make_plan(preset: str, **overrides) -> TrainPlan:
    if preset == "paper":
        base = TrainPlan(stages=PAPER_STAGES)
    elif preset == "desk":
        base = TrainPlan(stages=DESK_STAGES, fade_images=4_000, checkpoint_interval=1_000)
    else:
        raise PlanError(f"unknown preset {preset!r} (expected 'paper' or 'desk')")
    return replace(base, **overrides) if overrides else base


def alpha_schedule(images_shown: int, fade_images: int) -> float:
    """Linear fade of the old pathway: 1 at the start, 0 after fade_images."""
    if images_shown < 0 or fade_images < 0:
        raise ValueError("inputs must be >= 0")
    if fade_images == 0:
        return 0.0
    return max(1.0 - images_shown / fade_images, 0.0)


@dataclass
class MetricsRecord:
    iteration: int
    stage: int
    alpha: float
    d_loss: float
    g_loss: float
    gp_term: float
    wall_time: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, line: str) -> "MetricsRecord":
        return cls(**json.loads(line))


@dataclass
class Checkpoint:
    stage_index: int
    stage_iteration: int
    global_iteration: int
    alpha: float
    plan: TrainPlan
    net_spec: NetworkSpec
    g_seed: int
    d_seed: int
    g_params: dict
    d_params: dict
    adam_g: AdamState
    adam_d: AdamState
    rng_state: dict

    def save(self, ckpt_dir) -> Path:
        ckpt_dir = Path(ckpt_dir)
        tdir = ckpt_dir / "tensors"
        adir = ckpt_dir / "adam"
        tdir.mkdir(parents=True, exist_ok=True)
        adir.mkdir(parents=True, exist_ok=True)
        for params in (self.g_params, self.d_params):
            for name, arr in params.items():
                save_tensor(tdir / f"{name}.tnsr", arr)
        for tag, state in (("g", self.adam_g), ("d", self.adam_d)):
            for name, arr in state.m.items():
                save_tensor(adir / f"{tag}.{name}.m.tnsr", arr)
                save_tensor(adir / f"{tag}.{name}.v.tnsr", state.v[name])
        manifest = {
            "format": 1,
            "stage_index": self.stage_index,
            "stage_iteration": self.stage_iteration,
            "global_iteration": self.global_iteration,
            "alpha": self.alpha,
            "plan": self.plan.to_dict(),
            "plan_hash": self.plan.plan_hash(),
            "net_spec": asdict(self.net_spec),
            "g_seed": self.g_seed,
            "d_seed": self.d_seed,
            "rng_state": self.rng_state,
            "adam": {
                tag: {
                    "lr": st.lr,
                    "beta1": st.beta1,
                    "beta2": st.beta2,
                    "eps": st.eps,
                    "t": st.t,
                    "steps": {name: st.steps[name] for name in sorted(st.m)},
                }
                for tag, st in (("g", self.adam_g), ("d", self.adam_d))
            },
        }
        (ckpt_dir / "manifest.json").write_text(json.dumps(manifest, indent=1))
        return ckpt_dir

    @classmethod
    def load(cls, ckpt_dir) -> "Checkpoint":
        ckpt_dir = Path(ckpt_dir)
        manifest = json.loads((ckpt_dir / "manifest.json").read_text())
        plan_dict = manifest["plan"]
        plan_dict["stages"] = tuple(tuple(s) for s in plan_dict["stages"])
        plan = TrainPlan(**plan_dict)
        if plan.plan_hash() != manifest["plan_hash"]:
            raise ValueError(f"{ckpt_dir}: plan hash mismatch; checkpoint corrupt")
        spec = NetworkSpec(**manifest["net_spec"])

        def read_adam(tag):
            meta = manifest["adam"][tag]
            state = AdamState(
                lr=meta["lr"], beta1=meta["beta1"], beta2=meta["beta2"], eps=meta["eps"], t=meta["t"]
            )
            for name, steps in meta["steps"].items():
                state.m[name] = load_tensor(ckpt_dir / "adam" / f"{tag}.{name}.m.tnsr")
                state.v[name] = load_tensor(ckpt_dir / "adam" / f"{tag}.{name}.v.tnsr")
                state.steps[name] = steps
            return state

        g_params, d_params = {}, {}
        for f in sorted((ckpt_dir / "tensors").glob("*.tnsr")):
            name = f.name[: -len(".tnsr")]
            (g_params if name.startswith("g.") else d_params)[name] = load_tensor(f)
        return cls(
            stage_index=manifest["stage_index"],
            stage_iteration=manifest["stage_iteration"],
            global_iteration=manifest["global_iteration"],
            alpha=manifest["alpha"],
            plan=plan,
            net_spec=spec,
            g_seed=manifest["g_seed"],
            d_seed=manifest["d_seed"],
            g_params=g_params,
            d_params=d_params,
            adam_g=read_adam("g"),
            adam_d=read_adam("d"),
            rng_state=manifest["rng_state"],
        )


def _to_training_batch(images_uint8: np.ndarray, dtype) -> np.ndarray:
    """HWC uint8 [0, 255] -> NCHW float in [-1, 1]."""
    x = images_uint8.astype(dtype) / dtype(127.5) - dtype(1.0)
    return np.ascontiguousarray(x.transpose(0, 3, 1, 2))


def tile_grid(images_uint8: np.ndarray, rows: int, cols: int) -> np.ndarray:
    n, h, w, c = images_uint8.shape
    if n < rows * cols:
        reps = math.ceil(rows * cols / n)
        images_uint8 = np.concatenate([images_uint8] * reps)[: rows * cols]
    grid = images_uint8[: rows * cols].reshape(rows, cols, h, w, c)
    return grid.transpose(0, 2, 1, 3, 4).reshape(rows * h, cols * w, c)


def to_uint8(batch_nchw: np.ndarray) -> np.ndarray:
    """NCHW float in [-1, 1] -> NHWC uint8."""
    x = np.clip((batch_nchw + 1.0) * 127.5, 0.0, 255.0)
    return np.rint(x).astype(np.uint8).transpose(0, 2, 3, 1)


def sample_images(
    generator: Generator,
    n: int,
    seed: int,
    stage: int | None = None,
    alpha: float = 0.0,
    batch_size: int = 32,
) -> np.ndarray:
    """Deterministically sample n images as uint8 HWC."""
    rng = np.random.default_rng(seed)
    out = []
    remaining = n
    dtype = generator.spec.np_dtype
    while remaining > 0:
        k = min(batch_size, remaining)
        z = rng.standard_normal((k, generator.spec.latent_dim)).astype(dtype)
        with no_grad():
            imgs = generator.forward(Tensor(z), stage=stage, alpha=alpha)
        out.append(to_uint8(imgs.data))
        remaining -= k
    return np.concatenate(out)


class ProgressiveTrainer:
    """Drives the stage/fade/checkpoint schedule over a resolution store."""

    def __init__(
        self,
        plan: TrainPlan,
        generator: Generator,
        discriminator: Discriminator,
        out_dir,
        g_seed: int = 1,
        d_seed: int = 2,
    ):
        if discriminator.head != "wgan-scalar":
            raise ValueError("progressive training uses the wgan-scalar head")
        self.plan = plan
        self.g = generator
        self.d = discriminator
        self.g_seed = g_seed
        self.d_seed = d_seed
        self.out_dir = Path(out_dir)
        self.ckpt_root = self.out_dir / "checkpoints"
        self.samples_dir = self.out_dir / "samples"
        self.metrics_path = self.out_dir / "metrics.jsonl"
        for p in (self.ckpt_root, self.samples_dir):
            p.mkdir(parents=True, exist_ok=True)
        self.adam_g = AdamState(lr=plan.lr, beta1=plan.beta1, beta2=plan.beta2)
        self.adam_d = AdamState(lr=plan.lr, beta1=plan.beta1, beta2=plan.beta2)
        self.rng = np.random.default_rng(plan.seed)
        self.stage_index = 0
        self.stage_iteration = 0  # iterations already completed in this stage
        self._grid_z = np.random.default_rng(
            np.random.SeedSequence(entropy=[plan.seed, GRID_SEED_TAG])
        ).standard_normal((64, generator.spec.latent_dim))
        self._start_time = time.monotonic()

    @classmethod
    def from_checkpoint(cls, ckpt_dir, out_dir, plan: TrainPlan | None = None):
        ckpt = Checkpoint.load(ckpt_dir)
        if plan is not None and plan.plan_hash() != ckpt.plan.plan_hash():
            raise PlanError("provided plan does not match the checkpoint's plan")
        g = Generator(ckpt.net_spec, ckpt.g_seed)
        d = Discriminator(ckpt.net_spec, ckpt.d_seed)
        g.load_state(ckpt.g_params)
        d.load_state(ckpt.d_params)
        trainer = cls(ckpt.plan, g, d, out_dir, g_seed=ckpt.g_seed, d_seed=ckpt.d_seed)
        trainer.adam_g = ckpt.adam_g
        trainer.adam_d = ckpt.adam_d
        trainer.rng = np.random.default_rng()
        trainer.rng.bit_generator.state = ckpt.rng_state
        trainer.stage_index = ckpt.stage_index
        trainer.stage_iteration = ckpt.stage_iteration
        return trainer

    # -- state helpers -----------------------------------------------------

    def _alpha(self, stage_iteration_done: int) -> float:
        if self.stage_index == 0:
            return 0.0
        return alpha_schedule(stage_iteration_done * self.plan.batch_size, self.plan.fade_images)

    def _global_iteration(self) -> int:
        done = sum(b for _, b in self.plan.stages[: self.stage_index])
        return done + self.stage_iteration

    def snapshot(self) -> Checkpoint:
        return Checkpoint(
            stage_index=self.stage_index,
            stage_iteration=self.stage_iteration,
            global_iteration=self._global_iteration(),
            alpha=self._alpha(self.stage_iteration),
            plan=self.plan,
            net_spec=self.g.spec,
            g_seed=self.g_seed,
            d_seed=self.d_seed,
            g_params=self.g.state(),
            d_params=self.d.state(),
            adam_g=self.adam_g,
            adam_d=self.adam_d,
            rng_state=self.rng.bit_generator.state,
        )

    def _write_checkpoint(self) -> Path:
        name = f"ckpt_{self.stage_index}_{self.stage_iteration:07d}"
        path = self.snapshot().save(self.ckpt_root / name)
        self._write_sample_grid()
        return path

    def _write_sample_grid(self) -> Path:
        dtype = self.g.spec.np_dtype
        alpha = self._alpha(self.stage_iteration)
        with no_grad():
            imgs = self.g.forward(
                Tensor(self._grid_z.astype(dtype)), stage=self.stage_index, alpha=alpha
            )
        grid = tile_grid(to_uint8(imgs.data), 8, 8)
        path = self.samples_dir / f"samples_{self.stage_index}_{self.stage_iteration:07d}.png"
        Image.fromarray(grid).save(path)
        return path

    # -- the loop ----------------------------------------------------------

    def fit(self, store, stop_after: int | None = None) -> Checkpoint:
        """Train until the plan completes (or ``stop_after`` more iterations)."""
        plan = self.plan
        missing = [res for res, _ in plan.stages if res not in store.resolutions]
        if missing:
            raise FileNotFoundError(
                f"resolution folder(s) missing from store: {sorted(missing)}"
            )
        dtype = self.g.spec.np_dtype
        remaining = stop_after
        metrics_fh = open(self.metrics_path, "a")
        try:
            while True:
                res, budget = plan.stages[self.stage_index]
                data = _to_training_batch(store.load_images(res), dtype)
                n_data = data.shape[0]
                while self.stage_iteration < budget:
                    if remaining is not None and remaining <= 0:
                        return self.snapshot()
                    alpha = self._alpha(self.stage_iteration)
                    record = self._train_iteration(data, n_data, alpha, dtype)
                    self.stage_iteration += 1
                    if remaining is not None:
                        remaining -= 1
                    it = self.stage_iteration
                    if it % plan.log_interval == 0:
                        record.iteration = self._global_iteration()
                        metrics_fh.write(record.to_json() + "\n")
                        metrics_fh.flush()
                    if it % plan.checkpoint_interval == 0 or it == budget:
                        self._write_checkpoint()
                if self.stage_index == len(plan.stages) - 1:
                    break
                self.stage_index += 1
                self.stage_iteration = 0
        finally:
            metrics_fh.close()
        return self.snapshot()

    def _train_iteration(self, data, n_data, alpha, dtype) -> MetricsRecord:
        plan = self.plan
        stage = self.stage_index
        batch = plan.batch_size
        rng = self.rng
        critic = self.d.at(stage, alpha)

        parts: dict = {}
        for _ in range(plan.d_steps):
            idx = rng.integers(0, n_data, size=batch)
            real = Tensor(data[idx])
            z = rng.standard_normal((batch, self.g.spec.latent_dim)).astype(dtype)
            with no_grad():
                fake = self.g.forward(Tensor(z), stage=stage, alpha=alpha)
            u = rng.random((batch, 1, 1, 1), dtype=np.float32).astype(dtype)
            d_loss = d_loss_wgan_gp(
                critic, real, fake, plan.gp_lambda, plan.drift_epsilon, u=u, parts=parts
            )
            self._check_finite(d_loss, "discriminator loss")
            d_params = self.d.active_parameters(stage, alpha)
            d_grads = backward(d_loss, [t for _, t in d_params])
            adam_step(d_params, d_grads, self.adam_d)

        z2 = rng.standard_normal((batch, self.g.spec.latent_dim)).astype(dtype)
        fake2 = self.g.forward(Tensor(z2), stage=stage, alpha=alpha)
        g_loss = g_loss_wgan(critic, fake2)
        self._check_finite(g_loss, "generator loss")
        g_params = self.g.active_parameters(stage, alpha)
        g_grads = backward(g_loss, [t for _, t in g_params])
        adam_step(g_params, g_grads, self.adam_g)

        return MetricsRecord(
            iteration=0,  # filled in by the caller when logged
            stage=stage,
            alpha=alpha,
            d_loss=d_loss.item(),
            g_loss=g_loss.item(),
            gp_term=parts.get("gp", 0.0),
            wall_time=time.monotonic() - self._start_time,
        )

    def _check_finite(self, loss, what: str) -> None:
        if not np.isfinite(loss.data).all():
            raise TrainingDiverged(
                f"{what} went non-finite at stage {self.stage_index} iteration "
                f"{self.stage_iteration + 1}; last checkpoint kept in {self.ckpt_root}"
            )


def train(plan: TrainPlan, store, nets, sink) -> Checkpoint:
    """One-call wrapper: nets is a (generator, discriminator) pair."""
    g, d = nets
    return ProgressiveTrainer(plan, g, d, sink).fit(store)


def expected_checkpoint_count(plan: TrainPlan) -> int:
    return sum(math.ceil(budget / plan.checkpoint_interval) for _, budget in plan.stages)


def train_dcgan(
    generator: Generator,
    discriminator: Discriminator,
    images_uint8: np.ndarray,
    iterations: int,
    batch_size: int = 16,
    lr: float = 0.001,
    beta1: float = 0.5,
    beta2: float = 0.999,
    seed: int = 0,
    metrics_path=None,
    log_interval: int = 100,
) -> list[MetricsRecord]:
    """Fixed-resolution minimax baseline; returns the logged records."""
    if generator.spec.mode != "dcgan-fixed" or discriminator.spec.mode != "dcgan-fixed":
        raise ValueError("train_dcgan expects dcgan-fixed networks")
    if discriminator.head != "sigmoid":
        raise ValueError("the baseline uses the sigmoid head")
    dtype = generator.spec.np_dtype
    data = _to_training_batch(images_uint8, dtype)
    rng = np.random.default_rng(seed)
    adam_g = AdamState(lr=lr, beta1=beta1, beta2=beta2)
    adam_d = AdamState(lr=lr, beta1=beta1, beta2=beta2)
    records = []
    start = time.monotonic()
    fh = open(metrics_path, "a") if metrics_path else None
    try:
        for it in range(1, iterations + 1):
            idx = rng.integers(0, data.shape[0], size=batch_size)
            real = Tensor(data[idx])
            z = rng.standard_normal((batch_size, generator.spec.latent_dim)).astype(dtype)
            with no_grad():
                fake = generator.forward(Tensor(z))
            d_loss, _ = dcgan_losses(discriminator, real, fake)
            if not np.isfinite(d_loss.data).all():
                raise TrainingDiverged(f"discriminator loss non-finite at iteration {it}")
            d_params = discriminator.parameters()
            adam_step(d_params, backward(d_loss, [t for _, t in d_params]), adam_d)

            z2 = rng.standard_normal((batch_size, generator.spec.latent_dim)).astype(dtype)
            fake2 = generator.forward(Tensor(z2))
            _, g_loss = dcgan_losses(discriminator, real, fake2)
            if not np.isfinite(g_loss.data).all():
                raise TrainingDiverged(f"generator loss non-finite at iteration {it}")
            g_params = generator.parameters()
            adam_step(g_params, backward(g_loss, [t for _, t in g_params]), adam_g)

            if it % log_interval == 0 or it == iterations:
                rec = MetricsRecord(
                    iteration=it,
                    stage=0,
                    alpha=0.0,
                    d_loss=d_loss.item(),
                    g_loss=g_loss.item(),
                    gp_term=0.0,
                    wall_time=time.monotonic() - start,
                )
                records.append(rec)
                if fh:
                    fh.write(rec.to_json() + "\n")
    finally:
        if fh:
            fh.close()
    return records
