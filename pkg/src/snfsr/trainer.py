"""Joint training of denoiser, LR encoder and degradation model, plus checkpoints.

One step computes the LR-encoder L1 loss, the contrastive degradation loss and
the denoising L1 loss, sums them and takes a single Adam step over all
parameters.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import torch

from .data import synthetic_image
from .degradation import TrainingTriple, augment, make_triple, sample_spec
from .degrep import NegativeQueue, contrastive_loss
from .denoiser import UNetConfig
from .lrenc import RRDBConfig, encoder_loss
from .model import SNFModel
from .schedule import DiffusionSchedule, forward_marginal, make_schedule
from .substrate import Rng

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    # diffusion
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    # data
    lr_patch: int = 64
    scale_r: int = 4
    degradation_mode: str = "anisotropic_noisy"
    downsample: str = "decimate"
    augment: bool = False
    # optimisation
    batch_size: int = 2
    steps: int = 1000
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    # contrastive
    queue_size: int = 2048
    temperature: float = 0.07
    proj_dim: int = 256
    normalize_w: bool = True
    include_positive: bool = False
    # loss toggles
    use_snf: bool = True
    use_encoder: bool = True
    use_degrad: bool = True
    # architecture
    base_channels: int = 64
    channel_mults: str = "1,1,2,2"
    groupnorm_groups: int = 8
    daconv_hidden: int = 64
    use_degradation: bool = True
    rrdb_blocks: int = 4
    rrdb_channels: int = 64
    # inference defaults
    gamma: int = 50
    eta: float = 1.0
    # bookkeeping
    checkpoint_every: int = 0
    log_every: int = 50

    def __post_init__(self):
        positive = ("T", "lr_patch", "scale_r", "batch_size", "queue_size", "proj_dim",
                    "base_channels", "rrdb_blocks", "rrdb_channels", "gamma", "learning_rate", "temperature")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"config {name} must be positive, got {getattr(self, name)}")
        if self.steps < 0:
            raise ValueError("config steps must be non-negative")

    def unet(self) -> UNetConfig:
        mults = tuple(int(m) for m in str(self.channel_mults).split(","))
        return UNetConfig(base_channels=self.base_channels, depth=len(mults), channel_mults=mults,
                          groupnorm_groups=self.groupnorm_groups, u_channels=self.rrdb_channels,
                          daconv_hidden=self.daconv_hidden, use_degradation=self.use_degradation)

    def rrdb(self) -> RRDBConfig:
        return RRDBConfig(num_blocks=self.rrdb_blocks, channels=self.rrdb_channels)

    def schedule(self) -> DiffusionSchedule:
        return make_schedule(self.T, self.beta_start, self.beta_end)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)


def _coerce(name: str, raw: str):
    typ = {f.name: f.type for f in dataclasses.fields(TrainConfig)}[name]
    raw = raw.strip()
    if typ == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"config {name}: not a boolean: {raw!r}")
    if typ == "int":
        return int(raw)
    if typ == "float":
        return float(raw)
    return raw


def parse_config_text(text: str) -> dict:
    """``key = value`` lines, ``#`` comments. Unknown keys are errors."""
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in known:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        out[key] = _coerce(key, val)
    return out


def load_config(path: str | Path | None = None, **overrides) -> TrainConfig:
    values = parse_config_text(Path(path).read_text(encoding="utf-8")) if path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**values)


def config_to_text(cfg: TrainConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in dataclasses.asdict(cfg).items())


# ---------------------------------------------------------------- state


@dataclass
class TrainState:
    config: TrainConfig
    model: SNFModel
    optimizer: torch.optim.Optimizer
    queue: NegativeQueue
    schedule: DiffusionSchedule
    rng: Rng
    step: int = 0
    history: list[dict] = field(default_factory=list)


def init_state(cfg: TrainConfig) -> TrainState:
    torch.manual_seed(cfg.seed)
    model = SNFModel(cfg.unet(), cfg.rrdb(), cfg.scale_r, cfg.proj_dim)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate,
                           betas=(cfg.adam_beta1, cfg.adam_beta2), eps=cfg.adam_eps)
    return TrainState(cfg, model, opt, NegativeQueue(cfg.queue_size, cfg.temperature),
                      cfg.schedule(), Rng(cfg.seed + 1))


class TrainingDiverged(RuntimeError):
    pass


def snf_loss(x_hr, t, eps, u, v, sched: DiffusionSchedule, denoise: Callable) -> torch.Tensor:
    """Mean ``|x_hr - h(sqrt(abar_t) x_hr + sqrt(1 - abar_t) eps, t, u, v)|``."""
    x_t = forward_marginal(x_hr, t, eps, sched)
    return (x_hr - denoise(x_t, t, u, v)).abs().mean()


def stack_triples(triples: Sequence[TrainingTriple]) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    def st(ts):
        return torch.stack([x if x.dim() == 3 else x.squeeze(0) for x in ts])
    return (st([t.x_lr for t in triples]), st([t.x_lr_pos for t in triples]), st([t.x_hr for t in triples]))


def train_step(batch: Sequence[TrainingTriple] | TrainingTriple, state: TrainState,
               dump_path: str | Path | None = None) -> dict:
    """One joint optimisation step. Returns the loss breakdown."""
    if isinstance(batch, TrainingTriple):
        batch = [batch]
    cfg, model = state.config, state.model
    model.train()
    x_lr, x_pos, x_hr = stack_triples(batch)
    n = x_lr.shape[0]

    zero = x_hr.new_zeros(())
    u = model.encode_lr(x_lr) if (cfg.use_encoder or cfg.use_snf) else None
    l_enc = encoder_loss(model.lr_encoder.upsample_head(u), x_hr) if cfg.use_encoder else zero

    both = model.encode_degradation(torch.cat([x_lr, x_pos]))
    v, v_pos = both[:n], both[n:]
    w, w_pos = model.degradation.project(v), model.degradation.project(v_pos)
    if cfg.use_degrad and len(state.queue) > 0:
        l_deg = contrastive_loss(w, w_pos, state.queue, cfg.normalize_w, cfg.include_positive)
    else:
        l_deg = zero

    t = state.rng.integers(1, cfg.T + 1, size=n)
    eps = state.rng.normal(*x_hr.shape)
    v_cond = v if cfg.use_degradation else None
    l_snf = snf_loss(x_hr, t, eps, u, v_cond, state.schedule, model.denoise) if cfg.use_snf else zero

    total = l_snf + l_enc + l_deg
    if not torch.isfinite(total):
        if dump_path is not None:
            save_checkpoint(state, dump_path)
        raise TrainingDiverged(
            f"non-finite loss at step {state.step}: snf={l_snf.item()} enc={l_enc.item()} "
            f"degrad={l_deg.item()}" + (f"; state dumped to {dump_path}" if dump_path else ""))
    state.optimizer.zero_grad(set_to_none=True)
    # contrastive-only runs have nothing to differentiate until the queue fills
    if total.requires_grad:
        total.backward()
        state.optimizer.step()
    state.queue.push(w_pos.detach())
    state.step += 1

    rec = {"step": state.step, "L_snf": l_snf.item(), "L_encoder": l_enc.item(),
           "L_degrad": l_deg.item(), "total": total.item()}
    state.history.append(rec)
    return rec


# ---------------------------------------------------------------- data sources


class FixedTriples:
    """Draws uniformly from a fixed list of pre-built triples."""

    def __init__(self, triples: Sequence[TrainingTriple]):
        self.triples = list(triples)

    def __call__(self, rng: Rng) -> TrainingTriple:
        return self.triples[rng.integers(0, len(self.triples))]


class DegradingSource:
    """Random HR image, random degradation, random crops: the standard training feed."""

    def __init__(self, images: Sequence[torch.Tensor], cfg: TrainConfig):
        self.images = list(images)
        self.cfg = cfg

    def __call__(self, rng: Rng) -> TrainingTriple:
        cfg = self.cfg
        img = self.images[rng.integers(0, len(self.images))]
        spec = sample_spec(rng, cfg.degradation_mode, cfg.scale_r)
        triple = make_triple(img, spec, cfg.lr_patch, rng, cfg.downsample)
        return augment(triple, rng) if cfg.augment else triple


def synthetic_images(n: int, size: int, seed: int) -> list[torch.Tensor]:
    rng = Rng(seed)
    return [synthetic_image(rng, size) for _ in range(n)]


def train(state: TrainState, source: Callable[[Rng], TrainingTriple], steps: int | None = None,
          log_path: str | Path | None = None, checkpoint_dir: str | Path | None = None) -> list[dict]:
    """Run ``steps`` optimisation steps, appending to a CSV loss log if given."""
    steps = state.config.steps if steps is None else steps
    cfg = state.config
    writer = None
    fh = None
    if log_path is not None:
        log_path = Path(log_path)
        new = not log_path.exists()
        fh = open(log_path, "a", newline="")
        writer = csv.writer(fh)
        if new:
            writer.writerow(LOSS_COLUMNS)
    dump = Path(checkpoint_dir) / "diverged.ckpt" if checkpoint_dir else None
    out = []
    try:
        for _ in range(steps):
            batch = [source(state.rng) for _ in range(cfg.batch_size)]
            rec = train_step(batch, state, dump)
            out.append(rec)
            if writer:
                writer.writerow([rec[k] for k in LOSS_COLUMNS])
            if cfg.log_every and state.step % cfg.log_every == 0:
                log.info("step %d  snf %.4f  enc %.4f  degrad %.4f", state.step,
                         rec["L_snf"], rec["L_encoder"], rec["L_degrad"])
            if checkpoint_dir and cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0:
                save_checkpoint(state, Path(checkpoint_dir) / f"step{state.step:07d}.ckpt")
    finally:
        if fh:
            fh.close()
    return out


LOSS_COLUMNS = ("step", "L_snf", "L_encoder", "L_degrad", "total")


# ---------------------------------------------------------------- checkpoints
#
# Layout: MAGIC, u32 version, then records until EOF. Each record is
#   u32 name length, name (utf-8), u8 dtype code, u8 ndim, ndim x u64 dims,
#   u64 payload length, raw little-endian payload.

MAGIC = b"SNFSRCK\x00"
FORMAT_VERSION = 1
_DTYPES = {0: torch.float32, 1: torch.float64, 2: torch.int64, 3: torch.int32, 4: torch.uint8, 5: torch.bool}
_CODES = {v: k for k, v in _DTYPES.items()}


class CheckpointFormatError(ValueError):
    pass


class CheckpointVersionError(ValueError):
    pass


def write_records(path: str | Path, records: dict[str, torch.Tensor]) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    for name, t in records.items():
        t = t.detach().cpu().contiguous()
        if t.dtype not in _CODES:
            raise TypeError(f"unsupported dtype {t.dtype} for record {name}")
        nb = name.encode("utf-8")
        payload = t.numpy().tobytes() if t.numel() else b""
        buf.write(struct.pack("<I", len(nb)) + nb)
        buf.write(struct.pack("<BB", _CODES[t.dtype], t.dim()))
        buf.write(struct.pack(f"<{t.dim()}Q", *t.shape))
        buf.write(struct.pack("<Q", len(payload)) + payload)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)


def read_records(path: str | Path) -> dict[str, torch.Tensor]:
    data = Path(path).read_bytes()
    if data[:len(MAGIC)] != MAGIC:
        raise CheckpointFormatError(f"{path}: not a checkpoint (bad magic bytes)")
    pos = len(MAGIC)

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointFormatError(f"{path}: truncated checkpoint")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    (version,) = struct.unpack("<I", take(4))
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: checkpoint version {version}, expected {FORMAT_VERSION}")
    out = {}
    while pos < len(data):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        code, ndim = struct.unpack("<BB", take(2))
        if code not in _DTYPES:
            raise CheckpointFormatError(f"{path}: unknown dtype code {code} in record {name}")
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        (plen,) = struct.unpack("<Q", take(8))
        payload = take(plen)
        dtype = _DTYPES[code]
        if payload:
            t = torch.frombuffer(bytearray(payload), dtype=dtype).reshape(shape).clone()
        else:
            t = torch.empty(shape, dtype=dtype)
        out[name] = t
    return out


def _text(s: str) -> torch.Tensor:
    return torch.tensor(list(s.encode("utf-8")), dtype=torch.uint8)


def _untext(t: torch.Tensor) -> str:
    return bytes(t.tolist()).decode("utf-8")


def save_checkpoint(state: TrainState, path: str | Path) -> None:
    rec: dict[str, torch.Tensor] = {"config": _text(state.config.to_json())}
    for k, v in state.model.state_dict().items():
        rec[f"model/{k}"] = v
    opt_sd = state.optimizer.state_dict()
    rec["optim/param_groups"] = _text(json.dumps(opt_sd["param_groups"]))
    for idx, st in opt_sd["state"].items():
        for k, v in st.items():
            rec[f"optim/state/{idx}/{k}"] = v if isinstance(v, torch.Tensor) else torch.tensor(v)
    if state.queue.entries is not None:
        rec["queue/entries"] = state.queue.entries
    rec["train/step"] = torch.tensor(state.step, dtype=torch.int64)
    rec["rng/seed"] = torch.tensor(state.rng.seed, dtype=torch.int64)
    rec["rng/state"] = state.rng.get_state()
    write_records(path, rec)


def load_checkpoint(path: str | Path) -> TrainState:
    rec = read_records(path)
    try:
        cfg = TrainConfig(**json.loads(_untext(rec["config"])))
        state = init_state(cfg)
        model_sd = {k[len("model/"):]: v for k, v in rec.items() if k.startswith("model/")}
        state.model.load_state_dict(model_sd, strict=True)
        groups = json.loads(_untext(rec["optim/param_groups"]))
        opt_state: dict[int, dict] = {}
        for k, v in rec.items():
            if k.startswith("optim/state/"):
                idx, key = k[len("optim/state/"):].split("/", 1)
                opt_state.setdefault(int(idx), {})[key] = v
        state.optimizer.load_state_dict({"state": opt_state, "param_groups": groups})
        if "queue/entries" in rec:
            state.queue.entries = rec["queue/entries"]
        state.step = int(rec["train/step"])
        state.rng = Rng(int(rec["rng/seed"]))
        state.rng.set_state(rec["rng/state"])
    except KeyError as e:
        raise CheckpointFormatError(f"{path}: missing record {e}") from e
    return state


def moving_average(xs: Sequence[float], window: int) -> list[float]:
    out, acc = [], 0.0
    for i, x in enumerate(xs):
        acc += x
        if i >= window:
            acc -= xs[i - window]
        out.append(acc / min(i + 1, window))
    return out
