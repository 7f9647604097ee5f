"""Pool-based active learning for CTC+attention sequence recognition.

Library layout:

- ``numerics``: float64 tensors, reverse-mode autodiff tape, Adam, checkpoints
- ``ctc``: CTC loss (log-space DP), brute-force oracle, greedy decoding
- ``asr_model``: bidirectional recurrent encoder + attention decoder
- ``loss_predictor``: loss-regression heads, error functions, joint cost
- ``selection``: acquisition strategies (rs / lc / el / lp) and top-K picking
- ``dataset``: synthetic corpus generation, JSONL persistence, splits
- ``pipeline``: the iterative select-annotate-retrain loop
- ``eval_report``: edit-distance metrics, correlations, CSV reports
- ``figures``: matplotlib rendering for the report path
- ``cli``: the ``alseqlab`` command-line entry point
"""

__version__ = "0.1.0"
