"""
visualization module for spikelab runs.
handles plotting of loss curves, solution slices, ood error growth and the
generator sparsity pattern.
"""

import os
from typing import Optional, Sequence

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd


class Visualizer:
    """
    visualizer class following single responsibility principle.
    responsible only for creating visualizations.
    """

    def __init__(self, output_dir: str, figsize: tuple = (10, 5)):
        """
        initialize visualizer.

        args:
            output_dir: directory receiving the svg files
            figsize: default figure size for plots
        """
        self.figsize = figsize
        self.output_dir = output_dir

    def _save_fig(self, filename: str) -> str:
        os.makedirs(self.output_dir, exist_ok=True)
        path = os.path.join(self.output_dir, filename)
        plt.savefig(path, format="svg", bbox_inches="tight")
        plt.close()
        return path

    def plot_loss_curves(self, history: pd.DataFrame, title: str) -> str:
        """
        plot every loss term on a log scale.

        args:
            history: loss history with step, total, physics, koopman, sparse, ic, bc
            title: plot title
        """
        fig, ax = plt.subplots(figsize=self.figsize)
        for column in ['total', 'physics', 'koopman', 'sparse', 'ic', 'bc']:
            values = history[column].to_numpy()
            if np.any(values > 0):
                ax.semilogy(history['step'], np.where(values > 0, values, np.nan), label=column, linewidth=1.5)
        ax.set_title(title, fontsize=14, fontweight='bold')
        ax.set_xlabel('Step')
        ax.set_ylabel('Loss')
        ax.legend()
        ax.grid(alpha=0.3)
        plt.tight_layout()
        return self._save_fig("loss_curves.svg")

    def plot_solution_slices(
        self,
        x: np.ndarray,
        t: np.ndarray,
        predicted: np.ndarray,
        reference: np.ndarray,
        title: str,
        slices: Sequence[int] = (0, -1),
        channel: int = 0,
    ) -> str:
        """
        compare network and reference at a few time slices of a (Nt, Nx, C) field.
        """
        fig, ax = plt.subplots(figsize=self.figsize)
        colors = plt.cm.viridis(np.linspace(0.0, 0.9, len(slices)))
        for color, k in zip(colors, slices):
            ax.plot(x, reference[k, :, channel], '-', color=color, linewidth=2, label=f'reference t={t[k]:.2f}')
            ax.plot(x, predicted[k, :, channel], '--', color=color, linewidth=2, label=f'network t={t[k]:.2f}')
        ax.set_title(title, fontsize=14, fontweight='bold')
        ax.set_xlabel('x')
        ax.set_ylabel('u')
        ax.legend(fontsize=8)
        ax.grid(alpha=0.3)
        plt.tight_layout()
        return self._save_fig("solution_slices.svg")

    def plot_trajectory(self, t: np.ndarray, predicted: np.ndarray, reference: np.ndarray,
                        channel_names: Sequence[str], title: str) -> str:
        """ode trajectories, one panel per state channel."""
        fig, axes = plt.subplots(len(channel_names), 1, figsize=(self.figsize[0], 2.2 * len(channel_names)),
                                 sharex=True, squeeze=False)
        for i, (ax, name) in enumerate(zip(axes[:, 0], channel_names)):
            ax.plot(t, reference[:, i], 'b-', linewidth=2, label='reference')
            ax.plot(t, predicted[:, i], 'r--', linewidth=1.5, label='network')
            ax.set_ylabel(name)
            ax.grid(alpha=0.3)
        axes[0, 0].set_title(title, fontsize=14, fontweight='bold')
        axes[0, 0].legend()
        axes[-1, 0].set_xlabel('t')
        plt.tight_layout()
        return self._save_fig("trajectory.svg")

    def plot_ood_error(self, t: np.ndarray, error: np.ndarray, title: str,
                       train_end: Optional[float] = 1.0) -> str:
        """pointwise-in-time rms error, marking the end of the training window."""
        fig, ax = plt.subplots(figsize=self.figsize)
        ax.semilogy(t, np.maximum(error, 1e-16), 'r-', linewidth=2, label='rms error')
        if train_end is not None:
            ax.axvline(x=train_end, color='gray', linestyle=':', alpha=0.8, label='training window end')
        ax.set_title(title, fontsize=14, fontweight='bold')
        ax.set_xlabel('t')
        ax.set_ylabel('error')
        ax.legend()
        ax.grid(alpha=0.3)
        plt.tight_layout()
        return self._save_fig("ood_error.svg")

    def plot_generator(self, A: np.ndarray, title: str, threshold: float = 1e-4) -> str:
        """log-magnitude of the generator entries; entries below threshold blank."""
        fig, ax = plt.subplots(figsize=(6, 5))
        magnitude = np.where(np.abs(A) >= threshold, np.log10(np.abs(A) + 1e-300), np.nan)
        image = ax.imshow(magnitude, cmap='magma', interpolation='nearest')
        fig.colorbar(image, ax=ax, label='log10 |A_ij|')
        ax.set_title(title, fontsize=12, fontweight='bold')
        plt.tight_layout()
        return self._save_fig("generator.svg")
