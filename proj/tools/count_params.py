#!/usr/bin/env python3
"""Closed-form parameter count of the fusion network for a given width and depth."""
import argparse


def conv(cin, cout, kh, kw, bias=True):
    return cin * cout * kh * kw + (cout if bias else 0)


def count(blocks, channels, sa_kernel=3, isa_kernel=7, ablation="none"):
    c = channels
    plain = 2 * conv(c, c, 3, 3)
    total = conv(4, 4, 3, 3)                          # upsampling refinement
    total += conv(4, c, 3, 3) + conv(c, c, 3, 3)      # MS general
    total += conv(1, c, 3, 3) + conv(c, c, 3, 3)      # PAN general
    total += conv(c, c, 3, 3)                         # SS general
    spectral = conv(c, c, 3, 3) + sa_kernel
    inception = (conv(c, c, 1, 1)
                 + conv(c, c, 1, 3) + conv(c, c, 3, 1)
                 + conv(c, c, 1, 5) + conv(c, c, 5, 1)
                 + conv(3 * c, c, 1, 1)
                 + conv(2, 1, isa_kernel, isa_kernel, bias=False))
    total += blocks * (plain if ablation == "no-rsab" else spectral)
    total += blocks * (plain if ablation == "no-rmsab" else inception)
    total += blocks * plain
    total += conv((blocks + 2) * c, c, 1, 1) + conv(c, 4, 3, 3)
    return total


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--blocks", type=int, default=9)
    ap.add_argument("--channels", type=int, default=64)
    ap.add_argument("--ablation", default="none")
    a = ap.parse_args()
    print(count(a.blocks, a.channels, ablation=a.ablation))
