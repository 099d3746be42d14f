#!/usr/bin/env python3
"""Layer-arithmetic oracle for the U-Net trainable parameter count."""
import sys


def conv(cout, cin, k):
    return cout * cin * k ** 3 + cout


def norm(c):
    return 2 * c  # gamma + beta


def block(cin, cout):
    return conv(cout, cin, 3) + norm(cout) + conv(cout, cout, 3) + norm(cout)


def upconv(cin, cout):
    return cin * cout * 8 + cout


def unet_params(in_channels, enc=(32, 64, 128, 256), out_channels=2):
    total = 0
    total += block(in_channels, enc[0])
    total += block(enc[0], enc[1])
    total += block(enc[1], enc[2])
    total += block(enc[2], enc[3])          # bottleneck
    total += upconv(enc[3], enc[2]) + block(2 * enc[2], enc[2])
    total += upconv(enc[2], enc[1]) + block(2 * enc[1], enc[1])
    total += upconv(enc[1], enc[0]) + block(2 * enc[0], enc[0])
    total += conv(out_channels, enc[0], 1)  # 1x1x1 head
    return total


if __name__ == "__main__":
    for c in ([int(a) for a in sys.argv[1:]] or [1, 2]):
        print(f"in_channels={c}: {unet_params(c)}")
