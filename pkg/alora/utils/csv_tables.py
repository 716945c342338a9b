import logging
from typing import Dict, List

import pandas as pd

from alora.models.importance import ImportanceTable
from alora.models.module_id import ModuleId

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.17g'


class CSVTables:
    """CSV readers and writers for every tabular run artifact"""

    IMPORTANCE_COLUMNS = ['layer', 'module', 'rank_index', 'score', 'module_avg']
    ALLOCATION_COLUMNS = ['layer', 'module', 'final_rank']
    COMPARE_COLUMNS = ['scorer', 'seed', 'final_dev_loss', 'rank_recovery']
    SWEEP_COLUMNS = ['budget_multiplier', 'seed', 'final_dev_loss', 'active_ranks_total']

    def write_importance(self, table: ImportanceTable, path: str):
        """One row per scored rank, ordered by (layer, module, rank_index)"""
        df = pd.DataFrame(table.to_records(), columns=self.IMPORTANCE_COLUMNS)
        self._write(df, path)

    def read_importance(self, path: str) -> ImportanceTable:
        df = self._read(path, self.IMPORTANCE_COLUMNS)
        return ImportanceTable.from_records(df.to_dict('records'))

    def allocation_frame(self, per_module: Dict[ModuleId, int]) -> pd.DataFrame:
        rows = [{'layer': mid.layer, 'module': mid.kind.slug, 'final_rank': int(count)}
                for mid, count in sorted(per_module.items())]
        return pd.DataFrame(rows, columns=self.ALLOCATION_COLUMNS)

    def write_allocation(self, per_module: Dict[ModuleId, int], path: str):
        """Final active ranks per (layer, module): the allocation heatmap data"""
        self._write(self.allocation_frame(per_module), path)

    def read_allocation(self, path: str) -> pd.DataFrame:
        return self._read(path, self.ALLOCATION_COLUMNS)

    def write_report(self, allocation: pd.DataFrame, path: str):
        """Heatmap CSV restricted to the allocation columns, in input row order"""
        self._write(allocation[self.ALLOCATION_COLUMNS], path)

    def write_compare(self, rows: List[Dict], path: str):
        self._write(pd.DataFrame(rows, columns=self.COMPARE_COLUMNS), path)

    def write_sweep(self, rows: List[Dict], path: str):
        self._write(pd.DataFrame(rows, columns=self.SWEEP_COLUMNS), path)

    def _write(self, df: pd.DataFrame, path: str):
        df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
        logger.info(f"Wrote {len(df)} rows to {path}")

    def _read(self, path: str, required: List[str]) -> pd.DataFrame:
        df = pd.read_csv(path)
        missing = set(required) - set(df.columns)
        if missing:
            raise ValueError(f"Missing required columns in {path}: {sorted(missing)}")
        return df
