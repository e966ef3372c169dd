"""Soft-DTW in a few lines: how gamma trades smoothness for fidelity to DTW.

Run: python demos/01_soft_dtw_basics.py
"""
import numpy as np

from csp_explain.clustering import soft_dtw_barycenter
from csp_explain.metrics import dtw, soft_dtw, soft_dtw_divergence, soft_dtw_grad

t = np.linspace(0, 2 * np.pi, 30)
a = 0.5 + 0.3 * np.sin(t)
b = 0.5 + 0.3 * np.sin(t - 0.6)  # same shape, shifted in time

print(f"DTW(a, b) = {dtw(a, b):.5f}")
for gamma in (10.0, 1.0, 0.1, 1e-3):
    print(f"  gamma={gamma:<6g} soft-DTW={soft_dtw(a, b, gamma):+.5f}  divergence={soft_dtw_divergence(a, b, gamma):.5f}")

# soft-DTW can go below zero for large gamma; the divergence cannot, and it is
# zero for identical inputs, which is why clustering uses it.
print(f"divergence(a, a) = {soft_dtw_divergence(a, a, 1.0):.2e}")

g = soft_dtw_grad(a, b, gamma=1.0)
print(f"gradient w.r.t. a: norm {np.linalg.norm(g):.4f}, largest at t={int(np.argmax(np.abs(g)))}")

# a barycenter of three phase-shifted copies keeps the sinusoid shape
members = np.stack([0.5 + 0.3 * np.sin(t - s) for s in (0.0, 0.4, 0.8)])
bary = soft_dtw_barycenter(members, gamma=1.0)
print(f"barycenter range [{bary.min():.3f}, {bary.max():.3f}] vs members [{members.min():.3f}, {members.max():.3f}]")
print(f"Euclidean mean range [{members.mean(0).min():.3f}, {members.mean(0).max():.3f}] (flattened by the shifts)")
