"""Smoke test for the lesionkit extension module."""

import json
import math
import tempfile

import lesionkit


def main():
    heat = [[0.9 if 4 <= r < 9 and 6 <= c < 12 else 0.05 for c in range(16)] for r in range(16)]
    boxes = lesionkit.prompt_boxes(heat)
    assert boxes[0][:4] == (4, 6, 8, 11), boxes

    masks = [[[2.0, -2.0], [-2.0, 2.0]], [[1.0, 1.0], [-1.0, -1.0]]]
    r = lesionkit.aggregate(masks, [[0.0, 1.0], [1.0, 0.0]], [[1.0, 0.0], [0.0, 1.0]], [0.8, 0.2], [1.0, 0.2])
    assert abs(sum(r["w_final"]) - 1.0) < 1e-12
    assert sorted(r["high_set"] + r["low_set"]) == [0, 1]

    image = [[((r * 7 + c * 3) % 11) / 10.0 for c in range(24)] for r in range(24)]
    mask = [[1.0 if (r - 12) ** 2 + (c - 12) ** 2 <= 49 else 0.0 for c in range(24)] for r in range(24)]
    feats = dict(lesionkit.radiomics(image, mask))
    assert len(feats) == 738 and all(math.isfinite(v) for v in feats.values())

    assert lesionkit.roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert lesionkit.dice(mask, mask) == (1.0, 1.0)

    with tempfile.TemporaryDirectory() as d:
        assert lesionkit.synth(d + "/data", n_cases=24, size=32, seed=1) == 24
        code, report = lesionkit.run_pipeline(d + "/data", d + "/out")
        report = json.loads(report)
        assert code == 0, report
        print("validation AUC", report["diagnosis"]["AUC"], "mDSC", report["segmentation"]["mDSC"])
    print("smoke test passed")


if __name__ == "__main__":
    main()
