"""Posterior sample archives in the NSA1 container format.

Layout: ASCII magic "NSA1", u32-le header length, UTF-8 JSON header
{n_chains, n_warmup, n_draws, dim, master_seed, acceptance_per_chain,
created_by}, then float64-le payload ordered chain-major, draw-major,
coordinate-minor, each chain's warmup draws before its retained draws.
"""

import json
import os
import struct

import numpy as np

MAGIC = b"NSA1"
CREATED_BY = "reasoner-0.1.0"


class ArchiveError(ValueError):
    pass


class SampleArchive:
    """Chains x draws x latent-dim samples plus provenance."""

    def __init__(self, draws, warmup=None, master_seed=0,
                 acceptance_per_chain=None, created_by=CREATED_BY):
        draws = np.asarray(draws, dtype=np.float64)
        if draws.ndim != 3:
            raise ArchiveError(f"draws must be (chains, draws, dim), got {draws.shape}")
        self.draws = draws
        n_chains, _, dim = draws.shape
        if warmup is None:
            warmup = np.zeros((n_chains, 0, dim))
        self.warmup = np.asarray(warmup, dtype=np.float64)
        if self.warmup.shape[0] != n_chains or self.warmup.shape[2] != dim:
            raise ArchiveError(
                f"warmup shape {self.warmup.shape} inconsistent with draws "
                f"{draws.shape}")
        self.master_seed = int(master_seed)
        if acceptance_per_chain is None:
            acceptance_per_chain = [float("nan")] * n_chains
        self.acceptance_per_chain = [float(a) for a in acceptance_per_chain]
        self.created_by = created_by

    @property
    def n_chains(self):
        return self.draws.shape[0]

    @property
    def n_draws(self):
        return self.draws.shape[1]

    @property
    def n_warmup(self):
        return self.warmup.shape[1]

    @property
    def dim(self):
        return self.draws.shape[2]

    def flat(self):
        """All retained draws pooled across chains."""
        return self.draws.reshape(-1, self.dim)

    def save(self, path):
        header = json.dumps({
            "n_chains": self.n_chains,
            "n_warmup": self.n_warmup,
            "n_draws": self.n_draws,
            "dim": self.dim,
            "master_seed": self.master_seed,
            "acceptance_per_chain": self.acceptance_per_chain,
            "created_by": self.created_by,
        }, sort_keys=True, separators=(",", ":")).encode("utf-8")
        tmp = f"{path}.tmp.{os.getpid()}"
        with open(tmp, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            for chain in range(self.n_chains):
                fh.write(self.warmup[chain].astype("<f8").tobytes())
                fh.write(self.draws[chain].astype("<f8").tobytes())
        os.replace(tmp, path)

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            blob = fh.read()
        if len(blob) < 8 or blob[:4] != MAGIC:
            raise ArchiveError(f"{path}: not an NSA1 archive")
        (header_len,) = struct.unpack("<I", blob[4:8])
        try:
            header = json.loads(blob[8:8 + header_len].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as err:
            raise ArchiveError(f"{path}: bad header ({err})")
        m, w, n, d = (int(header[k]) for k in
                      ("n_chains", "n_warmup", "n_draws", "dim"))
        payload = np.frombuffer(blob, dtype="<f8", offset=8 + header_len)
        expected = m * (w + n) * d
        if payload.size != expected:
            raise ArchiveError(
                f"{path}: payload has {payload.size} values, header implies "
                f"{expected}")
        per_chain = payload.reshape(m, w + n, d)
        return cls(per_chain[:, w:, :].copy(), per_chain[:, :w, :].copy(),
                   header["master_seed"], header["acceptance_per_chain"],
                   header["created_by"])
