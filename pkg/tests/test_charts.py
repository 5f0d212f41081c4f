import pandas as pd
import pytest

from tools.charts import write_agreement_chart
from tools.errors import InputError

STRATEGIES = ["steal_ml", "steal_ml_coreset", "model_extraction", "dual_cf"]


def aggregates():
    rows = []
    for i, strategy in enumerate(STRATEGIES):
        for size in (1, 2, 4, 8):
            calls = size * (2 if strategy == "dual_cf" else 1)
            rows.append({"dataset": "syn", "strategy": strategy, "query_size": size,
                         "mean_agreement": 0.5 + 0.05 * i + 0.01 * size, "std_agreement": 0.1 / size,
                         "mean_api_calls": float(calls)})
    return pd.DataFrame(rows)


def test_one_polyline_per_strategy_and_panel(tmp_path):
    out = write_agreement_chart(aggregates(), str(tmp_path / "chart.svg"), title="syn <linear>")
    text = open(out, encoding="utf-8").read()
    assert text.startswith("<svg")
    assert text.count("<polyline") == 2 * len(STRATEGIES)
    for strategy in STRATEGIES:
        assert f">{strategy}</text>" in text
    assert "syn &lt;linear&gt;" in text
    assert "Initial queries" in text


def test_output_is_byte_identical(tmp_path):
    first = write_agreement_chart(aggregates(), str(tmp_path / "a.svg"))
    second = write_agreement_chart(aggregates(), str(tmp_path / "b.svg"))
    assert open(first, "rb").read() == open(second, "rb").read()


def test_api_calls_axis(tmp_path):
    text = open(write_agreement_chart(aggregates(), str(tmp_path / "c.svg"), "api-calls"), encoding="utf-8").read()
    assert "API calls" in text
    assert ">16</text>" in text


def test_errors_leave_no_file(tmp_path):
    target = tmp_path / "nothing.svg"
    with pytest.raises(InputError):
        write_agreement_chart(aggregates().iloc[0:0], str(target))
    with pytest.raises(InputError):
        write_agreement_chart(aggregates(), str(target), cost_axis="seconds")
    with pytest.raises(InputError):
        write_agreement_chart(aggregates(), str(target), group_column="variant")
    assert not target.exists()
