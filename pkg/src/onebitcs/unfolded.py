"""The four learned recovery architectures as encoder/decoder pipelines.

Each pipeline is a classic solver with its iterations unfolded into layers
and the per-iteration constants promoted to per-layer parameters:

* ``l_rfpi``  -- unfolded RFPI; per-layer step sizes delta_i and shrinkage
  threshold vectors tau_i; zero quantization thresholds.
* ``l_biht``  -- unfolded BIHT; per-layer step sizes; zero thresholds; a
  terminal renormalization layer produces the final estimate.
* ``lg_rfpi`` -- unfolded generalized RFPI; learnable thresholds join the
  sensing matrix in the encoder; no renormalization anywhere.
* ``lg_biht`` -- unfolded generalized BIHT; learnable thresholds.

Two forward modes share one layer structure.  ``eval`` uses the exact sign
and hard thresholding and must reproduce the classic solver trajectory when
the per-layer parameters are constant (delta_i = delta, tau_i = (delta/alpha) 1
for the RFPI family; delta_i = alpha/2 for the BIHT family -- the unfolded
step is written with delta_i where the classic step uses alpha/2).  ``train``
replaces every sign with tanh(t * .) -- including the measurement vector the
diagonal re-weighting is built from -- and hard thresholding with the
straight-through top-k mask, so the whole pipeline is differentiable in all
parameters.

Both modes start from z_0 = phi.T r / ||phi.T r||, computed from the mode's
own measurement vector, making the decoder a pure function of (r, params).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .numerics import (
    ContractViolation,
    RngStream,
    exact_sign,
    gaussian_matrix,
    gaussian_vector,
    matvec,
    matvec_t,
    norm2,
    relu,
)
from .signals import EXACT, SMOOTH, SensingModel, encode, signal_values
from .solvers import DegenerateIterate, hard_threshold

L_RFPI = "l_rfpi"
L_BIHT = "l_biht"
LG_RFPI = "lg_rfpi"
LG_BIHT = "lg_biht"
VARIANTS = (L_RFPI, L_BIHT, LG_RFPI, LG_BIHT)
RFPI_FAMILY = (L_RFPI, LG_RFPI)
BIHT_FAMILY = (L_BIHT, LG_BIHT)
GENERALIZED = (LG_RFPI, LG_BIHT)
EVAL = "eval"
TRAIN = "train"


@dataclass
class DecoderParams:
    """Per-layer decoder parameters.

    ``delta`` has one step size per layer.  ``tau`` is an (L, n) array of
    shrinkage thresholds for the RFPI family and None for the BIHT family;
    ``sparsity`` is the BIHT-family k and None for the RFPI family.
    """

    variant: str
    delta: np.ndarray
    tau: Optional[np.ndarray] = None
    sparsity: Optional[int] = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ContractViolation(f"DecoderParams: unknown variant {self.variant!r}")
        self.delta = np.atleast_1d(np.asarray(self.delta, dtype=np.float64))
        if self.variant in RFPI_FAMILY:
            if self.tau is None:
                raise ContractViolation(f"DecoderParams: {self.variant} requires tau")
            if self.sparsity is not None:
                raise ContractViolation(f"DecoderParams: {self.variant} takes no sparsity")
            self.tau = np.asarray(self.tau, dtype=np.float64)
            if self.tau.ndim != 2 or self.tau.shape[0] != self.layers:
                raise ContractViolation(
                    f"DecoderParams: tau shape {self.tau.shape} does not match L={self.layers}"
                )
        else:
            if self.tau is not None:
                raise ContractViolation(f"DecoderParams: {self.variant} takes no tau")
            if self.sparsity is None or self.sparsity < 1:
                raise ContractViolation(f"DecoderParams: {self.variant} requires sparsity >= 1")

    @property
    def layers(self) -> int:
        return self.delta.shape[0]


@dataclass
class PipelineOutput:
    """Per-layer estimates of one forward pass.

    ``initial`` is z_0; ``per_layer_estimates`` are the L layer outputs;
    ``final`` adds the terminal renormalization for ``l_biht`` and equals
    the last estimate otherwise (or z_0 when no layers ran).
    """

    initial: np.ndarray
    per_layer_estimates: list
    final: np.ndarray


def param_count(variant: str, layers: int, n: int) -> int:
    """Raw decoder parameter count: L*(n+1) for the RFPI family (per-layer
    tau vector plus step size), L for the BIHT family (step sizes only).

    The classic algorithms carry 2 and 1 tunable constants respectively, so
    the extra freedom of the unfolded decoders is L*(n+1) - 2 and L - 1.
    """
    if variant not in VARIANTS:
        raise ContractViolation(f"param_count: unknown variant {variant!r}")
    return layers * (n + 1) if variant in RFPI_FAMILY else layers


def decoder_from_classic(variant: str, layers: int, n: int, step_size: float,
                         penalty: float, sparsity: Optional[int] = None) -> DecoderParams:
    """Constant per-layer parameters matching a classic solver.

    RFPI family: delta_i = step_size, tau_i = (step_size / penalty) * ones.
    BIHT family: delta_i = penalty / 2 (the classic step scale).
    """
    if variant in RFPI_FAMILY:
        return DecoderParams(variant, np.full(layers, step_size),
                             tau=np.full((layers, n), step_size / penalty))
    return DecoderParams(variant, np.full(layers, penalty / 2.0), sparsity=sparsity)


def initialize_model(variant: str, n: int, m: int, layers: int, rng: RngStream,
                     step_size: float, penalty: float,
                     sparsity: Optional[int] = None) -> tuple:
    """Fresh trainable model: phi (and thresholds, generalized variants)
    i.i.d. N(0,1); decoder at the classic-solver constants so training starts
    from the tuned base algorithm."""
    phi = gaussian_matrix(rng.child("phi"), m, n)
    if variant in GENERALIZED:
        thresholds = gaussian_vector(rng.child("thresholds"), m)
    else:
        thresholds = np.zeros(m)
    enc = SensingModel(phi=phi, thresholds=thresholds)
    dec = decoder_from_classic(variant, layers, n, step_size, penalty, sparsity)
    return enc, dec


def _validate_pair(enc: SensingModel, dec: DecoderParams):
    if dec.variant in (L_RFPI, L_BIHT) and np.any(enc.thresholds != 0.0):
        raise ContractViolation(f"{dec.variant}: thresholds must be identically zero")
    if dec.variant in RFPI_FAMILY and dec.tau.shape[1] != enc.n:
        raise ContractViolation(
            f"forward: tau width {dec.tau.shape[1]} does not match n={enc.n}"
        )


# --------------------------------------------------------------- eval mode

def _shrink(t, tau):
    # the layer's sign(t) * ReLU(|t| - tau); unlike solvers.soft_shrink this
    # stays defined for slightly negative learned tau (mid-training evals)
    return np.sign(t) * np.maximum(np.abs(t) - tau, 0.0)


def _eval_layer(variant, z, enc, dec, i, r):
    phi, b = enc.phi, enc.thresholds
    delta = dec.delta[i]
    if variant == L_RFPI:
        c = r * matvec(phi, z)
        d = -matvec_t(phi, r * relu(-c))
        t = (1.0 + delta * float(d @ z)) * z - delta * d
        v = _shrink(t, dec.tau[i])
        if not np.any(v):
            raise DegenerateIterate(f"l_rfpi layer {i}: all entries shrunk to zero")
        return v / norm2(v)
    if variant == LG_RFPI:
        c = r * (matvec(phi, z) - b)
        d = -matvec_t(phi, r * relu(-c))
        return _shrink(z - delta * d, dec.tau[i])
    if variant == L_BIHT:
        u = z + delta * matvec_t(phi, r - exact_sign(matvec(phi, z)))
        return hard_threshold(u, dec.sparsity)
    # LG_BIHT
    u = z + delta * matvec_t(phi, r - exact_sign(matvec(phi, z) - b))
    return hard_threshold(u, dec.sparsity)


def _forward_eval(enc, dec, x, layer_count) -> PipelineOutput:
    meas = encode(enc, x, EXACT)
    z = matvec_t(enc.phi, meas.bits)
    nrm = norm2(z)
    if nrm == 0.0:
        raise DegenerateIterate("forward: back-projection is the zero vector")
    z = z / nrm
    z0 = z
    estimates = []
    for i in range(layer_count):
        z = _eval_layer(dec.variant, z, enc, dec, i, meas.bits)
        estimates.append(z)
    final = z
    if dec.variant == L_BIHT:
        nrm = norm2(final)
        if nrm == 0.0:
            raise DegenerateIterate("l_biht: zero output cannot be renormalized")
        final = final / nrm
    return PipelineOutput(initial=z0, per_layer_estimates=estimates, final=final)


# -------------------------------------------------------------- train mode

def make_param_vars(tape: ad.Tape, enc: SensingModel, dec: DecoderParams,
                    layer_count: Optional[int] = None) -> dict:
    """Register the trainable parameters of the first ``layer_count`` layers
    on a tape.  The per-layer values are registered as 0-d / row views so a
    gradient update through the returned arrays writes back into ``dec``."""
    layer_count = dec.layers if layer_count is None else layer_count
    pv = {"phi": tape.param("phi", enc.phi)}
    if dec.variant in GENERALIZED:
        pv["thresholds"] = tape.param("thresholds", enc.thresholds)
    for i in range(layer_count):
        pv[f"delta[{i}]"] = tape.param(f"delta[{i}]", dec.delta[i])
        if dec.variant in RFPI_FAMILY:
            pv[f"tau[{i}]"] = tape.param(f"tau[{i}]", dec.tau[i])
    return pv


def record_pipeline(tape: ad.Tape, variant: str, pv: dict, x: np.ndarray,
                    layer_count: int, sparsity: Optional[int],
                    smoothness: float) -> tuple:
    """Record the smooth (train-mode) forward pass on a tape.

    ``x`` is a vector or an (n, B) batch of column vectors.  Returns
    (z0, per-layer estimates, final) as Vars.
    """
    x_c = tape.constant(x)
    phi = pv["phi"]
    t = smoothness
    if variant in GENERALIZED:
        b = pv["thresholds"]
        pre = ad.sub(ad.mat_vec(phi, x_c), b)
    else:
        pre = ad.mat_vec(phi, x_c)
    r = ad.tanh_scaled(pre, t)
    z = ad.normalize_l2(ad.mat_vec_t(phi, r))
    z0 = z
    estimates = []
    for i in range(layer_count):
        delta = pv[f"delta[{i}]"]
        if variant == L_RFPI:
            c = ad.elem_mul(r, ad.mat_vec(phi, z))
            d = ad.scale(-1.0, ad.mat_vec_t(phi, ad.elem_mul(r, ad.relu(ad.scale(-1.0, c)))))
            coeff = ad.add(ad.scale(delta, ad.dot(d, z)), 1.0)
            tv = ad.sub(ad.elem_mul(coeff, z), ad.scale(delta, d))
            v = ad.elem_mul(ad.tanh_scaled(tv, t),
                            ad.relu(ad.sub(ad.abs_elem(tv), pv[f"tau[{i}]"])))
            z = ad.normalize_l2(v)
        elif variant == LG_RFPI:
            c = ad.elem_mul(r, ad.sub(ad.mat_vec(phi, z), b))
            d = ad.scale(-1.0, ad.mat_vec_t(phi, ad.elem_mul(r, ad.relu(ad.scale(-1.0, c)))))
            tv = ad.sub(z, ad.scale(delta, d))
            z = ad.elem_mul(ad.tanh_scaled(tv, t),
                            ad.relu(ad.sub(ad.abs_elem(tv), pv[f"tau[{i}]"])))
        elif variant == L_BIHT:
            resid = ad.sub(r, ad.tanh_scaled(ad.mat_vec(phi, z), t))
            z = ad.topk_mask(ad.add(z, ad.scale(delta, ad.mat_vec_t(phi, resid))), sparsity)
        else:  # LG_BIHT
            resid = ad.sub(r, ad.tanh_scaled(ad.sub(ad.mat_vec(phi, z), b), t))
            z = ad.topk_mask(ad.add(z, ad.scale(delta, ad.mat_vec_t(phi, resid))), sparsity)
        estimates.append(z)
    final = ad.normalize_l2(z) if variant == L_BIHT else z
    return z0, estimates, final


def forward(enc: SensingModel, dec: DecoderParams, x, mode: str = EVAL,
            layer_count: Optional[int] = None) -> PipelineOutput:
    """Run the pipeline end to end: encode x, decode through the layers.

    ``layer_count`` truncates the decoder (useful while growing the network
    round by round); default is all layers.
    """
    _validate_pair(enc, dec)
    vals = signal_values(x)
    if vals.shape[0] != enc.n:
        raise ContractViolation(f"forward: signal length {vals.shape[0]} != n={enc.n}")
    layer_count = dec.layers if layer_count is None else layer_count
    if not (0 <= layer_count <= dec.layers):
        raise ContractViolation(f"forward: layer_count {layer_count} out of range")
    if mode == EVAL:
        return _forward_eval(enc, dec, vals, layer_count)
    if mode == TRAIN:
        tape = ad.Tape()
        pv = make_param_vars(tape, enc, dec, layer_count)
        z0, ests, final = record_pipeline(tape, dec.variant, pv, vals, layer_count,
                                          dec.sparsity, enc.smoothness)
        return PipelineOutput(initial=z0.value,
                              per_layer_estimates=[e.value for e in ests],
                              final=final.value)
    raise ContractViolation(f"forward: unknown mode {mode!r}")


# -------------------------------------------------------------- checkpoints

SCHEMA_VERSION = 1


class CheckpointError(ValueError):
    """Checkpoint schema, shape, or checksum problem."""


def _canonical(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def compute_checksum(payload: dict) -> str:
    """SHA-256 of the canonical JSON of every field except the checksum."""
    body = {k: v for k, v in payload.items() if k != "checksum"}
    return hashlib.sha256(_canonical(body).encode("utf-8")).hexdigest()


def export_checkpoint(enc: SensingModel, dec: DecoderParams, rng_seed: int = 0) -> dict:
    """Serialize a model to the checkpoint payload.

    Arrays are flattened row-major; floats survive the JSON round trip
    exactly (shortest round-trip representation).
    """
    _validate_pair(enc, dec)
    payload = {
        "schema_version": SCHEMA_VERSION,
        "variant": dec.variant,
        "n": enc.n,
        "m": enc.m,
        "L": dec.layers,
        "K": dec.sparsity,
        "t": enc.smoothness,
        "phi": enc.phi.reshape(-1).tolist(),
        "thresholds": enc.thresholds.tolist(),
        "delta": dec.delta.tolist(),
        "tau": None if dec.tau is None else dec.tau.reshape(-1).tolist(),
        "rng_seed": int(rng_seed),
    }
    payload["checksum"] = compute_checksum(payload)
    return payload


def import_checkpoint(payload: dict) -> tuple:
    """Rebuild (SensingModel, DecoderParams, meta) from a checkpoint payload."""
    if payload.get("schema_version") != SCHEMA_VERSION:
        raise CheckpointError(f"unsupported schema_version {payload.get('schema_version')!r}")
    if payload.get("checksum") != compute_checksum(payload):
        raise CheckpointError("checksum mismatch")
    variant = payload["variant"]
    if variant not in VARIANTS:
        raise CheckpointError(f"unknown variant {variant!r}")
    n, m, layers = payload["n"], payload["m"], payload["L"]
    phi = np.asarray(payload["phi"], dtype=np.float64)
    if phi.shape != (m * n,):
        raise CheckpointError(f"phi has {phi.shape[0]} entries, expected {m * n}")
    thresholds = np.asarray(payload["thresholds"], dtype=np.float64)
    if thresholds.shape != (m,):
        raise CheckpointError(f"thresholds length {thresholds.shape[0]}, expected {m}")
    delta = np.asarray(payload["delta"], dtype=np.float64)
    if delta.shape != (layers,):
        raise CheckpointError(f"delta length {delta.shape[0]}, expected {layers}")
    tau = payload["tau"]
    if tau is not None:
        tau = np.asarray(tau, dtype=np.float64)
        if tau.shape != (layers * n,):
            raise CheckpointError(f"tau has {tau.shape[0]} entries, expected {layers * n}")
        tau = tau.reshape(layers, n)
    try:
        enc = SensingModel(phi=phi.reshape(m, n), thresholds=thresholds,
                           smoothness=payload["t"])
        dec = DecoderParams(variant=variant, delta=delta, tau=tau,
                            sparsity=payload["K"])
    except ContractViolation as err:
        raise CheckpointError(str(err)) from err
    meta = {"rng_seed": payload["rng_seed"], "checksum": payload["checksum"]}
    return enc, dec, meta


def save_checkpoint(path, enc: SensingModel, dec: DecoderParams, rng_seed: int = 0):
    """Write a checkpoint JSON file (canonical key order, so equal models
    produce byte-identical files)."""
    payload = export_checkpoint(enc, dec, rng_seed)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_checkpoint(path) -> tuple:
    with open(path, "r", encoding="utf-8") as fh:
        return import_checkpoint(json.load(fh))
