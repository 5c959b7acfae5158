"""Small transformer language model with a partitioned embedding table.

The embedding table is stored as two parameters (source rows, target rows)
split at the bilingual vocabulary offset, so the three trainable groups of
the decipherment regimes map directly onto parameters:

  emb_src : source embedding rows (E_e)
  emb_tgt : target embedding rows (E_f)
  ctx     : position embeddings, attention/FFN blocks, layer norms (W)

The output projection is tied to the embedding table by default; when untied
it splits into head halves that follow the embedding groups. Losses support
restricting the softmax to one half of the vocabulary (monolingual and
unidirectional regimes) or spanning both halves (joint training).

All randomness is injected: initialization from an integer seed, MLM
corruption from a caller-supplied numpy generator. CPU math runs single
threaded so checkpoints are bit-reproducible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .bpe import CLS_ID, MASK_ID, NUM_SPECIALS, PAD_ID, SEP_ID

IGNORE = -100
INIT_STD = 0.02


class ModelError(RuntimeError):
    pass


@dataclass
class ModelConfig:
    vocab_size: int
    partition: int  # bilingual offset: rows [0, partition) are source
    layers: int = 4
    hidden: int = 128
    heads: int = 4
    ff_dim: int = 512
    max_seq: int = 128
    tie_embeddings: bool = True
    eval_layer_set: tuple[int, ...] = (0, 2, 4)

    def __post_init__(self) -> None:
        if self.hidden % self.heads != 0:
            raise ModelError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if not 0 < self.partition <= self.vocab_size:
            raise ModelError("partition must split the vocabulary")
        bad = [l for l in self.eval_layer_set if not 0 <= l <= self.layers]
        if bad:
            raise ModelError(f"eval layers {bad} outside 0..{self.layers}")


class Block(nn.Module):
    """Pre-norm transformer block with explicit attention math (keeps the
    whole forward differentiable in float64 for the gradient audit)."""

    def __init__(self, d: int, heads: int, ff_dim: int):
        super().__init__()
        self.heads = heads
        self.d_head = d // heads
        self.ln1 = nn.LayerNorm(d)
        self.ln2 = nn.LayerNorm(d)
        self.qkv = nn.Linear(d, 3 * d)
        self.proj = nn.Linear(d, d)
        self.fc1 = nn.Linear(d, ff_dim)
        self.fc2 = nn.Linear(ff_dim, d)

    def forward(self, x: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
        B, T, d = x.shape
        h = self.ln1(x)
        q, k, v = self.qkv(h).split(d, dim=2)
        q = q.view(B, T, self.heads, self.d_head).transpose(1, 2)
        k = k.view(B, T, self.heads, self.d_head).transpose(1, 2)
        v = v.view(B, T, self.heads, self.d_head).transpose(1, 2)
        att = (q @ k.transpose(-2, -1)) / math.sqrt(self.d_head)
        att = att + bias  # (B, 1, T, T) additive mask
        att = F.softmax(att, dim=-1)
        y = (att @ v).transpose(1, 2).reshape(B, T, d)
        x = x + self.proj(y)
        x = x + self.fc2(F.gelu(self.fc1(self.ln2(x))))
        return x


class TinyLM(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d = config.hidden
        self.emb_src = nn.Parameter(torch.empty(config.partition, d))
        self.emb_tgt = nn.Parameter(torch.empty(config.vocab_size - config.partition, d))
        self.pos = nn.Parameter(torch.empty(config.max_seq, d))
        self.blocks = nn.ModuleList(
            Block(d, config.heads, config.ff_dim) for _ in range(config.layers)
        )
        self.ln_f = nn.LayerNorm(d)
        if not config.tie_embeddings:
            self.head_src = nn.Parameter(torch.empty(config.partition, d))
            self.head_tgt = nn.Parameter(
                torch.empty(config.vocab_size - config.partition, d)
            )

    # -- parameter groups ----------------------------------------------------

    def group_of(self, name: str) -> str:
        if name in ("emb_src", "head_src"):
            return "emb_src"
        if name in ("emb_tgt", "head_tgt"):
            return "emb_tgt"
        return "ctx"

    def set_trainable(self, groups: dict[str, bool]) -> None:
        for name, p in self.named_parameters():
            p.requires_grad_(groups.get(self.group_of(name), False))

    def trainable_flags(self) -> dict[str, bool]:
        flags: dict[str, bool] = {}
        for name, p in self.named_parameters():
            g = self.group_of(name)
            flags[g] = flags.get(g, False) or p.requires_grad
        return flags

    @property
    def embedding(self) -> torch.Tensor:
        return torch.cat([self.emb_src, self.emb_tgt], dim=0)

    @property
    def output_table(self) -> torch.Tensor:
        if self.config.tie_embeddings:
            return self.embedding
        return torch.cat([self.head_src, self.head_tgt], dim=0)

    # -- init ------------------------------------------------------------------

    def init_weights(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(int(seed) & 0x7FFFFFFF)
        with torch.no_grad():
            for name, p in self.named_parameters():
                if p.dim() >= 2 or name in ("pos", "emb_src", "emb_tgt"):
                    p.copy_(torch.empty_like(p).normal_(0.0, INIT_STD, generator=gen))
                elif "ln" in name and name.endswith("weight"):
                    p.fill_(1.0)
                else:
                    p.zero_()
            # LayerNorm weights live inside blocks too; redo them after the
            # generic loop so ordering stays stable regardless of dim.
            for mod in self.modules():
                if isinstance(mod, nn.LayerNorm):
                    mod.weight.fill_(1.0)
                    mod.bias.zero_()

    def reinit_group(self, group: str, seed: int) -> None:
        """Fresh draws for one embedding group (unidirectional decipherment)."""
        gen = torch.Generator().manual_seed(int(seed) & 0x7FFFFFFF)
        with torch.no_grad():
            for name, p in self.named_parameters():
                if self.group_of(name) == group:
                    p.copy_(torch.empty_like(p).normal_(0.0, INIT_STD, generator=gen))

    # -- forward ----------------------------------------------------------------

    def hidden_states(
        self, ids: torch.Tensor, causal: bool
    ) -> list[torch.Tensor]:
        """All layer activations: index 0 is the embedding output (token +
        position rows), index L the final post-norm state."""
        B, T = ids.shape
        if T > self.config.max_seq:
            raise ModelError(f"sequence length {T} exceeds max_seq {self.config.max_seq}")
        if int(ids.max()) >= self.config.vocab_size or int(ids.min()) < 0:
            raise ModelError("token id outside vocabulary range")
        emb = self.embedding
        x = emb[ids] + self.pos[:T].unsqueeze(0)
        dtype = x.dtype
        neg = torch.tensor(torch.finfo(dtype).min / 2, dtype=dtype)
        pad_bias = torch.where(
            (ids == PAD_ID).view(B, 1, 1, T), neg, torch.tensor(0.0, dtype=dtype)
        )
        if causal:
            causal_bias = torch.triu(
                torch.full((T, T), neg.item(), dtype=dtype), diagonal=1
            ).view(1, 1, T, T)
            bias = pad_bias + causal_bias
        else:
            bias = pad_bias
        states = [x]
        for block in self.blocks:
            x = block(x, bias)
            states.append(x)
        states[-1] = self.ln_f(states[-1])
        return states

    def logits_at(
        self,
        final_state: torch.Tensor,
        positions: torch.Tensor,
        lex_slice: tuple[int, int],
    ) -> torch.Tensor:
        """Output logits at (row, col) target positions over one vocab slice."""
        lo, hi = lex_slice
        h = final_state[positions[:, 0], positions[:, 1]]
        return h @ self.output_table[lo:hi].T


@dataclass
class Batch:
    """Padded token matrix plus its objective bookkeeping.

    labels use -100 for ignored positions; lex span (lo, hi) restricts the
    softmax (full-vocabulary joint training uses (0, vocab_size)).
    """

    ids: torch.Tensor
    attention: str  # "causal" | "bidirectional"
    labels: torch.Tensor
    lex_lo: int
    lex_hi: int

    def __post_init__(self) -> None:
        if self.attention not in ("causal", "bidirectional"):
            raise ModelError(f"unknown attention mode {self.attention!r}")
        if self.attention == "causal":
            # Masked-position targets (labels at masked inputs) are an MLM
            # construct; causal batches must be next-token shaped, which the
            # builders guarantee. Guard against hand-built confusion.
            if bool((self.ids == MASK_ID).any()):
                raise ModelError("causal batch must not contain MASK targets")


def pad_batch(sentences: list[list[int]], max_seq: int) -> torch.Tensor:
    """Frame sentences as CLS..SEP rows padded to the batch maximum."""
    framed = [[CLS_ID] + s[: max_seq - 2] + [SEP_ID] for s in sentences]
    width = max(len(s) for s in framed)
    out = torch.full((len(framed), width), PAD_ID, dtype=torch.long)
    for i, s in enumerate(framed):
        out[i, : len(s)] = torch.tensor(s, dtype=torch.long)
    return out


def make_clm_batch(
    sentences: list[list[int]], lex_slice: tuple[int, int], max_seq: int
) -> Batch:
    ids = pad_batch(sentences, max_seq)
    labels = torch.full_like(ids, IGNORE)
    labels[:, :-1] = ids[:, 1:]
    # Targets are the body tokens only: padding is never predicted and the
    # shared SEP sits outside half-vocabulary softmax slices.
    labels[labels == PAD_ID] = IGNORE
    labels[labels == SEP_ID] = IGNORE
    return Batch(
        ids=ids, attention="causal", labels=labels, lex_lo=lex_slice[0], lex_hi=lex_slice[1]
    )


def corrupt_for_mlm(
    ids: torch.Tensor,
    mask_ratio: float,
    rng: np.random.Generator,
    random_pool: tuple[int, int],
) -> tuple[torch.Tensor, torch.Tensor]:
    """BERT-style corruption of body tokens (CLS/SEP/PAD are never targets).

    Of the selected positions 80% become MASK, 10% a random lexical id drawn
    from ``random_pool`` (the sentence's own vocabulary half), 10% stay. When
    the draw selects nothing, the first maskable position is forced so the
    loss is always defined.
    """
    maskable = ~torch.isin(
        ids, torch.tensor([PAD_ID, CLS_ID, SEP_ID], dtype=torch.long)
    )
    if not bool(maskable.any()):
        raise ModelError("batch has no maskable tokens")
    select = torch.from_numpy(rng.random(tuple(ids.shape)) < mask_ratio) & maskable
    if not bool(select.any()):
        flat = torch.nonzero(maskable.reshape(-1)).squeeze(1)
        select = select.reshape(-1)
        select[flat[0]] = True
        select = select.reshape(ids.shape)

    labels = torch.full_like(ids, IGNORE)
    labels[select] = ids[select]

    corrupted = ids.clone()
    roll = torch.from_numpy(rng.random(tuple(ids.shape)))
    to_mask = select & (roll < 0.8)
    to_random = select & (roll >= 0.8) & (roll < 0.9)
    corrupted[to_mask] = MASK_ID
    n_rand = int(to_random.sum())
    if n_rand:
        lo, hi = random_pool
        draws = torch.from_numpy(rng.integers(lo, hi, size=n_rand))
        corrupted[to_random] = draws
    return corrupted, labels


def make_mlm_batch(
    sentences: list[list[int]],
    lex_slice: tuple[int, int],
    max_seq: int,
    mask_ratio: float,
    rng: np.random.Generator,
    random_pool: tuple[int, int] | None = None,
) -> Batch:
    ids = pad_batch(sentences, max_seq)
    lo, hi = lex_slice
    pool = random_pool if random_pool is not None else (lo + NUM_SPECIALS, hi)
    corrupted, labels = corrupt_for_mlm(ids, mask_ratio, rng, pool)
    return Batch(
        ids=corrupted, attention="bidirectional", labels=labels, lex_lo=lo, lex_hi=hi
    )


def lm_loss(model: TinyLM, batch: Batch) -> torch.Tensor:
    """Mean NLL (natural log) over the batch's labeled positions."""
    positions = torch.nonzero(batch.labels != IGNORE)
    if positions.numel() == 0:
        raise ModelError("batch has no loss targets")
    states = model.hidden_states(batch.ids, causal=batch.attention == "causal")
    logits = model.logits_at(states[-1], positions, (batch.lex_lo, batch.lex_hi))
    targets = batch.labels[positions[:, 0], positions[:, 1]] - batch.lex_lo
    if int(targets.min()) < 0 or int(targets.max()) >= batch.lex_hi - batch.lex_lo:
        raise ModelError("label outside the batch's vocabulary slice")
    return F.cross_entropy(logits, targets)


def clm_loss(
    model: TinyLM,
    sentences: list[list[int]],
    lex_slice: tuple[int, int] | None = None,
) -> torch.Tensor:
    """Next-token NLL with the causal attention mask."""
    lex = lex_slice or (0, model.config.vocab_size)
    return lm_loss(model, make_clm_batch(sentences, lex, model.config.max_seq))


def mlm_loss(
    model: TinyLM,
    sentences: list[list[int]],
    mask_ratio: float,
    seed: int,
    lex_slice: tuple[int, int] | None = None,
) -> torch.Tensor:
    """Denoising NLL at corrupted positions; corruption is drawn from
    ``seed`` so the loss is deterministic."""
    lex = lex_slice or (0, model.config.vocab_size)
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    return lm_loss(
        model,
        make_mlm_batch(sentences, lex, model.config.max_seq, mask_ratio, rng),
    )


# -- optimizer ------------------------------------------------------------------


class AdamWithWarmup:
    """Adam with linear warmup over the first 5% of the step budget.

    State tensors live per parameter name so checkpoints can declare them as
    raw arrays; frozen parameters (requires_grad False) are never touched.
    """

    def __init__(
        self,
        model: TinyLM,
        lr: float = 3e-4,
        total_steps: int = 1,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        warmup_frac: float = 0.05,
    ):
        self.model = model
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.total_steps = total_steps
        self.warmup = max(1, int(round(warmup_frac * total_steps)))
        self.t = 0
        self.m: dict[str, torch.Tensor] = {}
        self.v: dict[str, torch.Tensor] = {}
        for name, p in model.named_parameters():
            self.m[name] = torch.zeros_like(p, requires_grad=False)
            self.v[name] = torch.zeros_like(p, requires_grad=False)

    def current_lr(self) -> float:
        scale = min(1.0, self.t / self.warmup)
        return self.lr * scale

    @torch.no_grad()
    def step(self) -> None:
        self.t += 1
        lr_t = self.current_lr()
        b1, b2 = self.betas
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, p in self.model.named_parameters():
            if not p.requires_grad or p.grad is None:
                continue
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m.mul_(b1).add_(g, alpha=1.0 - b1)
            v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
            denom = (v / bc2).sqrt_().add_(self.eps)
            p.addcdiv_(m, denom, value=-lr_t / bc1)
            # v was mutated in-place by sqrt_; restore the running moment.
            denom.sub_(self.eps).pow_(2).mul_(bc2)
            v.copy_(denom)

    def zero_grad(self) -> None:
        for p in self.model.parameters():
            p.grad = None


def training_step(
    model: TinyLM,
    optimizer: AdamWithWarmup,
    batch: Batch,
) -> float:
    """One adaptive-moment update on the trainable groups; frozen groups are
    untouched bit-for-bit. Raises on a non-finite loss."""
    optimizer.zero_grad()
    loss = lm_loss(model, batch)
    value = float(loss)
    if not math.isfinite(value):
        raise ModelError(
            f"non-finite loss {value} at optimizer step {optimizer.t} "
            f"(lr {optimizer.current_lr():.2e}, batch {tuple(batch.ids.shape)})"
        )
    if any(p.requires_grad for p in model.parameters()):
        loss.backward()
        optimizer.step()
    return value


# -- checkpoint io -----------------------------------------------------------------

CHECKPOINT_SCHEMA = "checkpoint-v1"


def save_checkpoint(
    path: str | Path,
    model: TinyLM,
    optimizer: AdamWithWarmup | None = None,
    step: int = 0,
    extra: dict | None = None,
) -> None:
    """JSON header line + raw little-endian float32 arrays in declared order."""
    arrays: list[tuple[str, np.ndarray]] = []
    for name, p in model.named_parameters():
        arrays.append((f"param/{name}", p.detach().numpy().astype("<f4", copy=False)))
    opt_meta = None
    if optimizer is not None:
        for name in sorted(optimizer.m):
            arrays.append((f"adam_m/{name}", optimizer.m[name].numpy().astype("<f4", copy=False)))
            arrays.append((f"adam_v/{name}", optimizer.v[name].numpy().astype("<f4", copy=False)))
        opt_meta = {
            "t": optimizer.t,
            "lr": optimizer.lr,
            "total_steps": optimizer.total_steps,
            "betas": list(optimizer.betas),
            "eps": optimizer.eps,
            "warmup": optimizer.warmup,
        }
    header = {
        "schema_id": CHECKPOINT_SCHEMA,
        "config": asdict(model.config),
        "step": step,
        "partition": model.config.partition,
        "trainable": model.trainable_flags(),
        "optimizer": opt_meta,
        "extra": extra or {},
        "arrays": [
            {"name": n, "shape": list(a.shape), "dtype": "<f4"} for n, a in arrays
        ],
    }
    tmp = Path(str(path) + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a).tobytes())
    tmp.replace(path)


def load_checkpoint(
    path: str | Path,
) -> tuple[TinyLM, AdamWithWarmup | None, int, dict]:
    with Path(path).open("rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("schema_id") != CHECKPOINT_SCHEMA:
            raise ModelError(f"{path}: unsupported checkpoint schema")
        blobs: dict[str, np.ndarray] = {}
        for decl in header["arrays"]:
            count = int(np.prod(decl["shape"])) if decl["shape"] else 1
            data = fh.read(count * 4)
            if len(data) != count * 4:
                raise ModelError(f"{path}: truncated array {decl['name']}")
            blobs[decl["name"]] = np.frombuffer(data, dtype="<f4").reshape(decl["shape"])

    cfg_dict = dict(header["config"])
    cfg_dict["eval_layer_set"] = tuple(cfg_dict["eval_layer_set"])
    config = ModelConfig(**cfg_dict)
    model = TinyLM(config)
    with torch.no_grad():
        for name, p in model.named_parameters():
            p.copy_(torch.from_numpy(blobs[f"param/{name}"].copy()))
    model.set_trainable(header["trainable"])

    optimizer = None
    if header["optimizer"] is not None:
        meta = header["optimizer"]
        optimizer = AdamWithWarmup(
            model,
            lr=meta["lr"],
            total_steps=meta["total_steps"],
            betas=tuple(meta["betas"]),
            eps=meta["eps"],
        )
        optimizer.warmup = meta["warmup"]
        optimizer.t = meta["t"]
        for name in optimizer.m:
            optimizer.m[name] = torch.from_numpy(blobs[f"adam_m/{name}"].copy())
            optimizer.v[name] = torch.from_numpy(blobs[f"adam_v/{name}"].copy())
    return model, optimizer, header["step"], header["extra"]


def init_model(config: ModelConfig, seed: int) -> TinyLM:
    torch.set_num_threads(1)  # keeps CPU reductions bit-reproducible
    model = TinyLM(config)
    model.init_weights(seed)
    return model
