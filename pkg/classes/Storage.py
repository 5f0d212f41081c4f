import numpy as np
import pandas as pd

from tools.errors import InputError

RECORD_COLUMNS = ("dataset", "strategy", "query_size", "run_seed", "agreement", "api_calls", "dropped_pairs")
AGGREGATE_COLUMNS = ("dataset", "strategy", "query_size", "mean_agreement", "std_agreement", "mean_api_calls")
GROUP_KEYS = ["dataset", "strategy", "query_size"]


class ResultTable:
    def __init__(self, records=None):
        """
        Initializes a container for per-run sweep results.

        Args:
            records (list): Optional record dicts to start from, in order.
        """
        self.data = {key: [] for key in RECORD_COLUMNS}
        for record in records or []:
            self.append_record(record)

    def __len__(self):
        return len(self.data["agreement"])

    def append_record(self, record):
        """
        Append one (dataset, strategy, query_size, run) result.

        Args:
            record (dict): Values for every column in RECORD_COLUMNS.
        """
        missing = [key for key in RECORD_COLUMNS if key not in record]
        if missing:
            raise InputError(f"record is missing {missing}")
        if not 0.0 <= record["agreement"] <= 1.0:
            raise InputError(f"agreement must lie in [0, 1], got {record['agreement']}")
        for key in RECORD_COLUMNS:
            self.data[key].append(record[key])

    def extend(self, records):
        for record in records:
            self.append_record(record)

    def get_all_data(self, key):
        """All values of one column, in record order."""
        if key not in self.data:
            raise InputError(f"unknown column {key!r}")
        return np.array(self.data[key])

    def records_frame(self):
        frame = pd.DataFrame(self.data, columns=list(RECORD_COLUMNS))
        return frame.astype({"query_size": int, "run_seed": np.uint64, "api_calls": int, "dropped_pairs": int})

    def aggregates(self):
        """
        Mean and population std of agreement, and mean API calls, per
        (dataset, strategy, query_size), in first-seen order.
        """
        if len(self) == 0:
            return pd.DataFrame(columns=list(AGGREGATE_COLUMNS))
        grouped = self.records_frame().groupby(GROUP_KEYS, sort=False)
        summary = grouped.agg(
            mean_agreement=("agreement", "mean"),
            std_agreement=("agreement", lambda a: float(np.std(a.to_numpy(), ddof=0))),
            mean_api_calls=("api_calls", "mean"),
        ).reset_index()
        return summary[list(AGGREGATE_COLUMNS)]

    def write_csv(self, records_path, aggregates_path):
        """Save the per-run records and the aggregates as two CSV files."""
        self.records_frame().to_csv(records_path, index=False, lineterminator="\n")
        self.aggregates().to_csv(aggregates_path, index=False, lineterminator="\n")
        return records_path, aggregates_path

    @classmethod
    def from_csv(cls, records_path):
        frame = pd.read_csv(records_path, dtype={"dataset": str, "strategy": str, "run_seed": np.uint64})
        missing = [key for key in RECORD_COLUMNS if key not in frame.columns]
        if missing:
            raise InputError(f"{records_path} lacks columns {missing}")
        table = cls()
        for row in frame.itertuples(index=False):
            table.append_record({key: getattr(row, key) for key in RECORD_COLUMNS})
        return table


def read_aggregates(path):
    """Load an aggregates CSV written by ResultTable.write_csv."""
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError as exc:
        raise InputError(f"aggregates file not found: {path}") from exc
    except pd.errors.EmptyDataError as exc:
        raise InputError(f"{path} is empty") from exc
    except pd.errors.ParserError as exc:
        raise InputError(f"{path} is not a valid CSV: {exc}") from exc
    missing = [key for key in AGGREGATE_COLUMNS if key not in frame.columns]
    if missing:
        raise InputError(f"{path} lacks columns {missing}")
    if frame.empty:
        raise InputError(f"{path} holds no aggregates")
    return frame
