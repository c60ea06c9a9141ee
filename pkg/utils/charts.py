"""
Charts Module

Plotly figures for corpus statistics, tag frequencies, evaluation metrics and
dataset splits, written as standalone HTML files.
"""

from pathlib import Path
from typing import Union

import pandas as pd
import plotly.graph_objects as go

from utils.helpers import atomic_output


def create_engine_chart(engine_counts: dict, top: int = 30) -> go.Figure:
    """Create bar chart of detections per AV engine."""
    ranked = sorted(engine_counts.items(), key=lambda item: (-item[1], item[0]))[:top]

    fig = go.Figure(data=[
        go.Bar(x=[engine for engine, _ in ranked], y=[count for _, count in ranked], marker_color="mediumpurple"),
    ])

    fig.update_layout(
        title="Detections per Engine",
        xaxis_title="Engine",
        yaxis_title="Labels",
        height=450,
        hovermode="x unified",
    )
    return fig


def create_tag_chart(top_tags: pd.DataFrame) -> go.Figure:
    """Create grouped bar chart of the most common tags per category."""
    fig = go.Figure()
    for category, rows in top_tags.groupby("category", sort=False):
        fig.add_trace(go.Bar(name=category, x=rows["tag"], y=rows["files"]))

    fig.update_layout(
        barmode="group",
        title="Most Common Tags per Category",
        xaxis_title="Tag",
        yaxis_title="Files",
        height=450,
    )
    return fig


def create_metric_chart(metrics: pd.DataFrame, title: str = "Per-tag Precision & Recall") -> go.Figure:
    """Create grouped bar chart of per-tag precision and recall."""
    rows = metrics[~metrics["tag"].astype(str).str.startswith("(")]

    fig = go.Figure(data=[
        go.Bar(name="Precision", x=rows["tag"], y=rows["precision"], marker_color="mediumpurple"),
        go.Bar(name="Recall", x=rows["tag"], y=rows["recall"], marker_color="lightseagreen"),
    ])

    fig.update_layout(
        barmode="group",
        title=title,
        xaxis_title="Tag",
        yaxis=dict(title="Score", range=[0, 1]),
        height=450,
        hovermode="x unified",
    )
    return fig


def create_split_chart(counts: pd.DataFrame, category: str) -> go.Figure:
    """Create stacked bar chart of train/test files per tag."""
    fig = go.Figure(data=[
        go.Bar(name="Train", x=counts["tag"], y=counts["train"], marker_color="mediumpurple"),
        go.Bar(name="Test", x=counts["tag"], y=counts["test"], marker_color="lightseagreen"),
    ])

    fig.update_layout(
        barmode="stack",
        title=f"{category} Dataset Split",
        xaxis_title="Tag",
        yaxis_title="Files",
        height=450,
    )
    return fig


def write_figure(fig: go.Figure, path: Union[str, Path]) -> None:
    """Write a self-contained HTML page (plotly.js from CDN)."""
    with atomic_output(path, "w") as handle:
        handle.write(fig.to_html(include_plotlyjs="cdn", full_html=True))
