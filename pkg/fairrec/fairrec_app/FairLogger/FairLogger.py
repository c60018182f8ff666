# run report logger
import logging
from pathlib import Path
from typing import Optional

import pandas as pd

from fairrec.fairrec_app.decorators.FairSingleton import FairSingleton

report_logger = logging.getLogger("fairrec.report")


@FairSingleton
class FairLogger:
    """
    Collects a markdown report of one pipeline run.

    Stages append headings, text and tables; ``flush`` writes everything
    collected so far to ``report.md`` and emits it on the ``fairrec.report``
    logger.
    """

    def __init__(self):
        self.content = []
        self.report_path: Optional[Path] = None

    def bind(self, report_path):
        """Sets the file that ``flush`` appends to."""
        self.report_path = Path(report_path)
        return self

    def add_text(self, text: str):
        """Adds plain text (as a paragraph)."""
        self.content.append(text)
        self.content.append("")  # empty line for separation
        return self

    def add_heading(self, heading: str, level: int = 1):
        """Adds a heading. Level can be from 1 to 6."""
        level = max(1, min(level, 6))
        self.content.append(f"{'#' * level} {heading}")
        self.content.append("")
        return self

    def add_list(self, items: list):
        self.content.extend(f"- {item}" for item in items)
        self.content.append("")
        return self

    def add_dataframe(self, df: pd.DataFrame, max_rows: int = 30):
        """Adds a pandas DataFrame rendered as a Markdown table.

        Long frames are cut to their first ``max_rows`` rows.
        """
        self.content.append(df.head(max_rows).to_markdown(index=False))
        if len(df) > max_rows:
            self.content.append(f"({len(df) - max_rows} more rows)")
        self.content.append("")
        return self

    def render(self) -> str:
        return "\n".join(self.content)

    def flush(self):
        final_output = self.render()
        if not final_output:
            return self
        report_logger.debug(final_output)
        if self.report_path is not None:
            with open(self.report_path, "a", encoding="utf-8") as f:
                f.write(final_output + "\n")
        self.content = []
        return self
