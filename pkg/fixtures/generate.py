"""Regenerate the numeric and binary fixture data.

Writes, deterministically:

- x86_rapl/attribution/: a scripted 32-bit counter series that wraps once
  and encodes exactly 40 J over 10 s, plus /proc snapshots in which pid 4242
  takes 25% of busy ticks and pid 4243 takes 15%;
- gx10/bridge/: a 1 kHz board meter trace and a 10 Hz GPU trace of
  8 + 2 sin(2 pi t) W and 3 + sin(2 pi t) W over 2 s;
- gx10/spbm/: a jittered ~100 ms SPBM record stream, its layout and the
  authored accumulator totals.

Only the standard library is used, so the outputs do not depend on the
package under test. Run from the repository root: python3 fixtures/generate.py
"""

import math
import os
import random
import struct

HERE = os.path.dirname(os.path.abspath(__file__))


def write(path, text, mode="w"):
    path = os.path.join(HERE, path)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, mode) as fh:
        fh.write(text)


# --- attribution series ----------------------------------------------------

def attribution():
    rng = random.Random(4242)
    t0 = 1_700_000_000_000_000_000
    steps = 100
    total_uj = 40_000_000
    # random positive increments summing exactly to the total
    cuts = sorted(rng.sample(range(1, total_uj), steps - 1))
    incs = [b - a for a, b in zip([0] + cuts, cuts + [total_uj])]
    raw = 2**32 - 17_000_000  # wraps about 40% into the window
    lines = ["t_ns,raw"]
    for i in range(steps + 1):
        lines.append(f"{t0 + i * 100_000_000},{raw}")
        if i < steps:
            raw = (raw + incs[i]) % 2**32
    write("x86_rapl/attribution/counter.csv", "\n".join(lines) + "\n")
    write("x86_rapl/attribution/config.toml", "\n".join([
        "# scripted window: 40 J package energy over 10 s, 2 W idle",
        "counter_width_bits = 32",
        "counter_unit_uj = 1",
        "idle_power_w = 2.0",
        "ticks_per_second = 100",
        "pids = [4242, 4243]",
        "",
    ]))
    # user nice system idle iowait irq softirq steal guest guest_nice
    start = [500000, 1200, 80000, 9000000, 3000, 400, 900, 0, 0, 0]
    # 4000 busy ticks over the window; idle and iowait also move
    busy_delta = {0: 3000, 1: 100, 2: 700, 5: 80, 6: 120, 7: 0}
    end = list(start)
    for i, d in busy_delta.items():
        end[i] += d
    end[3] += 36000
    end[4] += 250

    def stat(vals):
        return "cpu  " + " ".join(map(str, vals)) + "\ncpu0 " + " ".join(map(str, vals)) + "\nintr 0\n"

    def pid_stat(pid, comm, utime, stime):
        fields = ["S", "1", str(pid), str(pid), "0", "-1", "4194304", "100", "0", "0", "0",
                  str(utime), str(stime), "0", "0", "20", "0", "1", "0", "12345"]
        return f"{pid} ({comm}) " + " ".join(fields) + "\n"

    write("x86_rapl/attribution/start/proc/stat", stat(start))
    write("x86_rapl/attribution/end/proc/stat", stat(end))
    write("x86_rapl/attribution/start/proc/4242/stat", pid_stat(4242, "agent (worker)", 7000, 1500))
    write("x86_rapl/attribution/end/proc/4242/stat", pid_stat(4242, "agent (worker)", 7800, 1700))
    write("x86_rapl/attribution/start/proc/4243/stat", pid_stat(4243, "tool runner", 300, 100))
    write("x86_rapl/attribution/end/proc/4243/stat", pid_stat(4243, "tool runner", 750, 250))


# --- bridge traces ------------------------------------------------------------

def trace(rate_hz, seconds, fn):
    n = int(rate_hz * seconds)
    lines = ["t_ns,power_mw"]
    for i in range(n + 1):
        t_ns = i * 1_000_000_000 // rate_hz
        lines.append(f"{t_ns},{fn(t_ns / 1e9) * 1000:.6f}")
    return "\n".join(lines) + "\n"


def bridge():
    write("gx10/bridge/meter.csv", trace(1000, 2, lambda t: 8 + 2 * math.sin(2 * math.pi * t)))
    write("gx10/bridge/gpu.csv", trace(10, 2, lambda t: 3 + math.sin(2 * math.pi * t)))


# --- SPBM stream --------------------------------------------------------------

LAYOUT = """\
# SPBM fixture record layout: 112 bytes, little-endian.
record_size = 112
endianness = little
timestamp = 0:u64
rails = 8:u32:14
rail_names = pcore0, pcore1, ecore0, ecore1, gpu_core, gpu_mem, dram0, dram1, soc_io, nvlink_c2c, pcie, usb, aux0, aux1
acc.PCoreCluster = 64:u64
acc.ECoreCluster = 72:u64
acc.Gpu = 80:u64
acc.SocTotal = 88:u64
acc_wrap_bits = 64
temps = 96:i16:8
temp_names = pcore, ecore, gpu, dram, soc, vrm, board, ambient
temp_scale = 0.01
max_rail_mw = 300000
min_temp_c = -40
max_temp_c = 125
"""


def spbm():
    rng = random.Random(100)
    n = 150
    t_base = 5_000_000_000
    acc_start = {"PCoreCluster": 2**64 - 40_000, "ECoreCluster": 12_345_678,
                 "Gpu": 987_654_321, "SocTotal": 3_000_000_000}
    acc = dict(acc_start)
    totals = {k: 0 for k in acc}
    blob = bytearray()
    prev_t = None
    for i in range(n):
        t = t_base + i * 100_000_000 + rng.randint(-10_000_000, 10_000_000)
        rails = [rng.randint(500, 9000) for _ in range(14)]
        temps = [rng.randint(3500, 6500) for _ in range(8)]
        if prev_t is not None:
            dt_s = (t - prev_t) / 1e9
            p_w = {"PCoreCluster": sum(rails[0:2]), "ECoreCluster": sum(rails[2:4]),
                   "Gpu": sum(rails[4:6])}
            p_w["SocTotal"] = sum(rails)
            for k, mw in p_w.items():
                inc = round(mw * dt_s)  # mW * s = mJ
                totals[k] += inc
                acc[k] = (acc[k] + inc) % 2**64
        prev_t = t
        rec = struct.pack("<Q14I4Q8h", t, *rails, acc["PCoreCluster"], acc["ECoreCluster"],
                          acc["Gpu"], acc["SocTotal"], *temps)
        blob += rec
    write("gx10/spbm/blob.bin", bytes(blob), "wb")
    write("gx10/spbm/layout.txt", LAYOUT)
    write("gx10/spbm/expected.toml", "\n".join(
        ["# authored accumulator increments, summed at generation time (mJ)",
         f"records = {n}", "[totals_mj]"]
        + [f"{k} = {v}" for k, v in totals.items()]
        + ["[start_mj]"] + [f"{k} = {v}" for k, v in acc_start.items()]
    ) + "\n")


if __name__ == "__main__":
    attribution()
    bridge()
    spbm()
