#!/usr/bin/env python3
# Copyright 2026 The gridshield Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Export solved IEEE test cases from PYPOWER into MATPOWER .m files.

The bus VM/VA columns hold the converged AC power-flow solution so that
the files carry a realistic operating point.
"""
import argparse
import importlib
import os

from pypower.api import ppoption, runpf

CASES = ["case14", "case30", "case57", "case118", "case300"]


def fmt_row(row):
    return "\t".join("%.10g" % v for v in row) + ";"


def export(name, outdir):
    mod = importlib.import_module("pypower." + name)
    ppc = getattr(mod, name)()
    opt = ppoption(VERBOSE=0, OUT_ALL=0)
    res, ok = runpf(ppc, opt)
    if not ok:
        raise SystemExit("power flow failed for " + name)
    path = os.path.join(outdir, name + ".m")
    with open(path, "w") as f:
        f.write("function mpc = %s\n" % name)
        f.write("%% %s, operating point from an AC power-flow solve\n" % name)
        f.write("mpc.version = '2';\n")
        f.write("mpc.baseMVA = %g;\n\n" % res["baseMVA"])
        f.write("%% bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin\n")
        f.write("mpc.bus = [\n")
        for r in res["bus"]:
            f.write("\t" + fmt_row(r[:13]) + "\n")
        f.write("];\n\n")
        f.write("%% fbus tbus r x b rateA rateB rateC ratio angle status angmin angmax\n")
        f.write("mpc.branch = [\n")
        for r in res["branch"]:
            f.write("\t" + fmt_row(r[:13]) + "\n")
        f.write("];\n")
    print("wrote", path)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "data"))
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)
    for c in CASES:
        export(c, args.out)


if __name__ == "__main__":
    main()
