"""Joint space-time-frequency CSI prediction for cell-free massive MIMO.

Core pieces: a sum-of-sinusoids channel simulator, correlation analysis
(PACF window selection, PCC kernel/adjacency selection), a graph/conv/
attention predictor with a small hand-rolled autodiff engine, training
and complexity accounting, a CFR/CIR delay-domain pipeline, and a FastAPI
service with the `cfchanpred` CLI as a thin client.
"""

__version__ = "0.1.0"
