"""Smoke test for the dcsim extension module.

Build it first, either with maturin (`maturin develop -m crates/python/Cargo.toml`)
or with cargo, copying the library next to this script:

    cargo build --release -p dcsim-python --features extension-module
    cp target/release/libdcsim.so python/dcsim.so
"""

import json
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import dcsim  # noqa: E402


HAND_TRACE = """\
job_id,user,vc,job_name,gpu_num,cpu_num,status,submit_time,start_time,end_time,duration
A,u,v,a,8,1,COMPLETED,0,,,100
B,u,v,b,8,1,COMPLETED,0,,,10
"""

HAND_CLUSTER = {
    "name": "hand",
    "nodes": 1,
    "gpus_per_node": 8,
    "vcs": [{"vc": "v", "node_count": 1, "effective_from": 0}],
}


def check(name, cond):
    print(f"{'ok' if cond else 'FAIL'}  {name}")
    return cond


def main():
    results = [
        check("levenshtein", dcsim.levenshtein("kitten", "sitting") == 3),
        check("energy", round(dcsim.energy_savings(79.5, 8760)) == 1671408),
        check("smape", dcsim.smape([1.0, 2.0], [1.0, 2.0]) == 0.0),
        check("arrival check", dcsim.job_arrival_check(10, 12, 2) == 4),
        check("periodic check", dcsim.periodic_check(55, 50, [50, 48, 46]) == 53),
        check("periodic no-op", dcsim.periodic_check(50, 50, [50, 48, 46]) is None),
    ]

    with tempfile.TemporaryDirectory() as tmp:
        trace = os.path.join(tmp, "hand.csv")
        cluster = os.path.join(tmp, "hand.json")
        with open(trace, "w") as f:
            f.write(HAND_TRACE)
        with open(cluster, "w") as f:
            json.dump(HAND_CLUSTER, f)
        fifo = dcsim.simulate(trace, cluster, "fifo")["metrics"]["cluster"]
        sjf = dcsim.simulate(trace, cluster, "sjf")["metrics"]["cluster"]
        results.append(check("fifo hand trace", fifo["avg_jct"] == 105.0))
        results.append(check("sjf hand trace", sjf["avg_jct"] == 60.0))

        synth = os.path.join(tmp, "synth.csv")
        n = dcsim.synth_trace(synth, jobs=400, days=10, seed=3)
        summary = dcsim.trace_summary(synth)
        results.append(check("synth", n == 400 and summary["jobs"] == 400))
        model, report = dcsim.train_model(synth, 1_598_918_400 + 7 * 86400, rounds=20)
        results.append(check("train", report is not None and report["rmse"] > 0))
        synth_cluster = os.path.join(tmp, "synth.json")
        with open(synth_cluster, "w") as f:
            json.dump(
                {
                    "name": "s",
                    "nodes": 6,
                    "gpus_per_node": 8,
                    "vcs": [
                        {"vc": v, "node_count": 2, "effective_from": 0}
                        for v in ("vc1", "vc2", "vc3")
                    ],
                },
                f,
            )
        qssf = dcsim.simulate(synth, synth_cluster, "qssf", model=model)
        results.append(check("qssf with model", len(qssf["jobs"]) > 0))

        try:
            dcsim.simulate(trace, cluster, "lifo")
            results.append(check("bad policy raises", False))
        except ValueError:
            results.append(check("bad policy raises", True))

    print(f"{sum(results)}/{len(results)} checks passed")
    return 0 if all(results) else 1


if __name__ == "__main__":
    sys.exit(main())
