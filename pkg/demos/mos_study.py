"""A complete opinion study in memory: probes, blinding, filtering.

Three synthetic raters score a small two-method study. Two rate by image
content; the third answers at random and trips the probe-consistency
filter. The report that comes out never saw a method name on the wire.

Run:  python3 demos/mos_study.py
"""

import numpy as np

from cycleiq import mos


def main():
    manifest = [
        (f"img_{i:02d}.png", method, task)
        for i, (method, task) in enumerate(
            (m, t)
            for m in ("ours", "baseline")
            for t in ("day2night", "facades")
            for _ in range(3)
        )
    ]
    study = mos.create_study(manifest, probe_fraction=0.2, seed=7)
    probes = sum(p.probe for p in study.presented)
    print(f"{len(manifest)} images, {probes} hidden probe repeats,"
          f" {study.n_presented} presentations per rater\n")

    def run_rater(name, ordinal, score_fn):
        session = mos.create_session(study, name, ordinal)
        while not session.completed:
            payload = mos.next_payload(study, session)
            assert "method" not in payload and "task" not in payload
            session = mos.submit_rating(
                session, payload["item"], score_fn(payload["image"])
            )
        return session

    rng = np.random.default_rng(0)
    sessions = [
        run_rater("alice", 0, lambda img: sum(img.encode()) % 5 + 1),
        run_rater("bob", 1, lambda img: (sum(img.encode()) + 2) % 5 + 1),
        run_rater("mallory", 2, lambda img: int(rng.integers(1, 6))),
    ]

    report = mos.study_report(sessions, study)
    print(f"raters kept: {report.rater_count}, removed as inconsistent:"
          f" {report.removed_count}\n")
    print(f"{'method':10s} {'task':10s} {'mean':>6s} {'n':>4s}")
    for cell in report.cells:
        print(f"{cell.method:10s} {cell.task:10s} {cell.mean:6.2f} {cell.ratings:4d}")


if __name__ == "__main__":
    main()
