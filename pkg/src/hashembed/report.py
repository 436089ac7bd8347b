# src/hashembed/report.py
import plotly.graph_objects as go

from .model import TrainHistory


def history_figure(history: TrainHistory) -> go.Figure:
    """Loss curves on the left axis, validation accuracy on the right, best epoch marked."""
    epochs = [r.epoch for r in history.records]
    fig = go.Figure()
    fig.add_trace(go.Scatter(x=epochs, y=[r.train_loss for r in history.records], name="Train loss"))
    fig.add_trace(go.Scatter(x=epochs, y=[r.val_loss for r in history.records], name="Validation loss"))
    fig.add_trace(
        go.Scatter(
            x=epochs,
            y=[r.val_acc for r in history.records],
            name="Validation accuracy",
            yaxis="y2",
        )
    )
    if history.best_epoch:
        fig.add_vline(x=history.best_epoch, line_dash="dot", annotation_text="best")
    fig.update_layout(
        title="Training history",
        xaxis_title="Epoch",
        yaxis=dict(title="Cross-entropy"),
        yaxis2=dict(title="Accuracy", overlaying="y", side="right", range=[0, 1]),
        height=400,
        margin=dict(l=10, r=10, t=40, b=10),
    )
    return fig


def write_history_html(history: TrainHistory, path) -> None:
    history_figure(history).write_html(str(path), include_plotlyjs="cdn")
