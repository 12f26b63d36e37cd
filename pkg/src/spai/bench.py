"""Micro-benchmark for the patch-count scaling contrast.

Measures wall time and peak incremental RSS of (a) the detector pipeline,
whose single-query patch attention is linear in K, and (b) a baseline that
concatenates all patch tokens and runs full self-attention over them,
which is quadratic. Run one configuration per process so peak-RSS
accounting stays clean:

    python -m spai.bench --mode sca --k 64
"""

from __future__ import annotations

import argparse
import gc
import json
import os
import resource
import sys
import time

import numpy as np
import torch
from torch import nn

from .backbone import BackboneConfig, SpectralEncoder
from .detector import DetectorConfig, SpectralDetector

BENCH_SEED = 7


# Wider-than-toy embedding keeps the K-scaled working set in a few large
# blocks, which makes the peak-RSS measurement repeatable.
BENCH_EMBED = 256


def _toy_config(side: int) -> BackboneConfig:
    return BackboneConfig(patch_pixels=4, depth=4, embed_dim=BENCH_EMBED, input_side=side)


def _toy_detector(side: int) -> SpectralDetector:
    torch.manual_seed(BENCH_SEED)
    encoder = SpectralEncoder(_toy_config(side))
    encoder.requires_grad_(False)
    encoder.frozen = True
    encoder.eval()
    detector = SpectralDetector(
        encoder, DetectorConfig(feature_dim=BENCH_EMBED, attn_dim=96, radius=4.0)
    )
    detector.eval()
    return detector


def _strip_image(k: int, side: int) -> np.ndarray:
    rng = np.random.default_rng(BENCH_SEED)
    return rng.random((side, side * k, 3)).astype(np.float32)


class QuadraticAttentionBaseline(nn.Module):
    """Full self-attention over the concatenated token sequences of all K
    patches; materializes the (K*L)^2 attention matrix."""

    def __init__(self, dim: int = 64, num_heads: int = 4):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.qkv = nn.Linear(dim, dim * 3)
        self.out = nn.Linear(dim, 1)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        l, d = tokens.shape
        q, k, v = self.qkv(tokens).chunk(3, dim=-1)
        q = q.view(l, self.num_heads, self.head_dim).transpose(0, 1)
        k = k.view(l, self.num_heads, self.head_dim).transpose(0, 1)
        v = v.view(l, self.num_heads, self.head_dim).transpose(0, 1)
        attn = torch.softmax(q @ k.transpose(-2, -1) / self.head_dim**0.5, dim=-1)
        pooled = (attn @ v).transpose(0, 1).reshape(l, d).mean(dim=0)
        return self.out(pooled)


def run_sca(k: int, side: int = 32):
    detector = _toy_detector(side)
    image = _strip_image(k, side)

    def once():
        return detector.score_array(image)

    return once


def run_quadratic(k: int, side: int = 32):
    torch.manual_seed(BENCH_SEED)
    config = _toy_config(side)
    encoder = SpectralEncoder(config)
    encoder.eval()
    baseline = QuadraticAttentionBaseline(dim=config.embed_dim)
    baseline.eval()
    rng = np.random.default_rng(BENCH_SEED)
    patches = torch.from_numpy(rng.random((k, 3, side, side)).astype(np.float32))

    @torch.no_grad()
    def once():
        tokens = encoder.tokenize(patches).reshape(-1, config.embed_dim)
        return baseline(tokens)

    return once


def _peak_rss_kb() -> int:
    """High-water resident size of this process's address space.

    Read from /proc (mm-scoped, resets on exec) rather than getrusage:
    ru_maxrss survives execve and is inherited across fork, so children of a
    large parent would otherwise measure nothing.
    """
    with open("/proc/self/status") as fh:
        for line in fh:
            if line.startswith("VmHWM:"):
                return int(line.split()[1])
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss


def _reset_peak_rss() -> bool:
    try:
        with open("/proc/self/clear_refs", "w") as fh:
            fh.write("5")
        return True
    except OSError:
        return False


def measure(mode: str, k: int, side: int = 32, repeats: int = 7) -> dict:
    """Peak incremental memory of one scoring call, then best-of wall time.

    A small-K warmup first absorbs one-time allocations (kernel caches, FFT
    plans); the high-water mark is then reset so the delta reflects only the
    measured call. Meant to run in a fresh process per configuration.
    """
    build = run_sca if mode == "sca" else run_quadratic
    build(4, side)()  # warmup at small K
    runner = build(k, side)
    gc.collect()
    _reset_peak_rss()
    rss_before = _peak_rss_kb()
    runner()
    rss_after = _peak_rss_kb()
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        runner()
        times.append(time.perf_counter() - start)
    # minimum over repeats: the scheduler only ever adds time
    return {
        "mode": mode,
        "k": k,
        "seconds": float(np.min(times)),
        "peak_rss_delta_kb": int(rss_after - rss_before),
    }


# Pinning the malloc mmap threshold disables glibc's dynamic adaptation,
# which otherwise makes peak-RSS deltas vary run to run. Must be set before
# the allocator initializes, hence the re-exec.
MALLOC_PIN = ("MALLOC_MMAP_THRESHOLD_", "65536")


def main(argv=None) -> int:
    if os.environ.get(MALLOC_PIN[0]) != MALLOC_PIN[1]:
        env = dict(os.environ, **{MALLOC_PIN[0]: MALLOC_PIN[1]})
        os.execve(sys.executable, [sys.executable, "-m", "spai.bench"] + (argv or sys.argv[1:]), env)
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--mode", choices=["sca", "quadratic"], required=True)
    parser.add_argument("--k", type=int, required=True)
    parser.add_argument("--side", type=int, default=32)
    parser.add_argument("--repeats", type=int, default=7)
    args = parser.parse_args(argv)
    print(json.dumps(measure(args.mode, args.k, args.side, args.repeats)))
    return 0


if __name__ == "__main__":
    sys.exit(main())
