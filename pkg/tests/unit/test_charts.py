"""Unit tests for the chart engine."""

import numpy as np
import pandas as pd

from src.charts import chart_ablation, chart_latency, chart_loss_curves, chart_probe_triptych
from src.evaluation.latency import AffineFit, LatencyReport, StageStats, VariantLatency


def variant(name, backbone, head, count, k=None):
    return VariantLatency(name=name, backbone_forward_ms=StageStats(backbone, backbone),
                          action_head_ms=StageStats(head, head), total_ms=StageStats(backbone + head, backbone + head),
                          backbone_forward_count=count, k=k)


class TestCharts:

    def test_loss_curves(self, tmp_path):
        metrics = pd.DataFrame({"step": [1, 2, 3], "l_vis": [1.0, 0.8, 0.6], "l_lin": [0.0, 0.0, 0.0],
                                "l_act": [2.0, 1.5, 1.2], "l_total": [2.1, 1.6, 1.3], "wall_ms": [5.0, 5.0, 5.0]})
        path = chart_loss_curves(metrics, tmp_path)
        assert path == tmp_path / "loss_curves.png"
        assert path.stat().st_size > 0

    def test_probe_triptych(self, tmp_path):
        rng = np.random.default_rng(0)
        path = chart_probe_triptych(rng.uniform(size=(32, 32, 3)), rng.uniform(size=(32, 32)),
                                    rng.uniform(size=(32, 32)), name="frame000", out_dir=tmp_path, pearson_r=0.5)
        assert path.name == "frame000.png"
        assert path.exists()

    def test_latency(self, tmp_path):
        report = LatencyReport(
            variants={"non_cot": variant("non_cot", 2.0, 1.0, 1), "ar_cot": variant("ar_cot", 40.0, 1.0, 65, k=64),
                      "parallel_cot": variant("parallel_cot", 2.2, 1.0, 1)},
            warmup=1, reps=2, sweep={8: 6.0, 16: 11.0}, fit=AffineFit(slope=0.625, intercept=1.0, r2=1.0),
        )
        assert chart_latency(report, tmp_path).exists()

    def test_ablation(self, tmp_path):
        table = pd.DataFrame({"variant": ["dual_cot", "no_cot"], "visual_cot": [1, 0], "linguistic_cot": [1, 0],
                              "1": [90.0, 80.0], "average": [90.0, 80.0]})
        assert chart_ablation(table, tmp_path).exists()

    def test_default_directory(self):
        metrics = pd.DataFrame({"step": [1], "l_act": [1.0]})
        assert chart_loss_curves(metrics).exists()
