"""Fine-tune a pretrained model for forecasting and beat persistence.

The pretrained encoder is rebuilt at window length input + horizon (its
parameter shapes do not depend on the window), the attention-map classifier
is frozen, and only the horizon positions enter the loss. The forecast is
compared against the repeat-last-value baseline.
"""

import numpy as np

from tsrm import (
    FinetuneObjective,
    ModelConfig,
    PretrainObjective,
    TaskSpec,
    TrainConfig,
    TsrmModel,
    evaluate_task,
    prepare_finetune,
    synth_dataset,
    train,
)
from tsrm.finetune import build_forecast_batch

INPUT_LEN, HORIZON = 96, 24

# --- quick pretraining phase ------------------------------------------------
config = ModelConfig(T=INPUT_LEN, F=1, f_embed=32, n_layers=2, heads=2,
                     branches=[{"kernel": 5, "dilation": 1}], dropout_p=0.0)
model = TsrmModel(config, seed=0)
objective = PretrainObjective(synth_dataset("sine", T=INPUT_LEN, F=1, n=256, seed=1),
                              synth_dataset("sine", T=INPUT_LEN, F=1, n=64, seed=2),
                              batch_size=8)
model, _ = train(model, objective, TrainConfig(max_epochs=25, batch_size=8, seed=0,
                                               scheduler_patience=8,
                                               early_stop_patience=25))
print("pretraining done")

# --- forecasting fine-tune ----------------------------------------------------
task = TaskSpec("forecast", horizon=HORIZON, input_len=INPUT_LEN)
model = prepare_finetune(model, task)
frozen = sum(p.data.size for p in model.parameters() if p.frozen)
print(f"window extended to {model.config.T}; {frozen:,} classifier parameters frozen")

fc_train = synth_dataset("sine", T=INPUT_LEN + HORIZON, F=1, n=256, seed=3)
fc_val = synth_dataset("sine", T=INPUT_LEN + HORIZON, F=1, n=64, seed=4)
objective = FinetuneObjective(task, fc_train, fc_val, batch_size=8)
model, log = train(model, objective, TrainConfig(max_epochs=50, batch_size=8, seed=0,
                                                 scheduler_patience=8,
                                                 early_stop_patience=50))
print(f"fine-tuned for {len(log.epochs)} epochs, best val {log.best_val:.5f}")

# --- evaluation vs persistence -----------------------------------------------
fc_test = synth_dataset("sine", T=INPUT_LEN + HORIZON, F=1, n=64, seed=5)
metrics = evaluate_task(model, fc_test, task)

batch = build_forecast_batch(fc_test.values, fc_test.observed, task)
persistence = np.repeat(batch.values[:, INPUT_LEN - 1: INPUT_LEN, :], HORIZON, axis=1)
baseline = float(((persistence - batch.values[:, INPUT_LEN:, :]) ** 2).mean())

print(f"\nhorizon {HORIZON}: model MSE {metrics['mse']:.4f}, MAE {metrics['mae']:.4f}")
print(f"persistence MSE {baseline:.4f}  (model is {baseline / metrics['mse']:.1f}x better)")

# A model tuned for a long span can score a shorter one by truncation:
short = evaluate_task(model, fc_test, task, horizon_eval=12)
print(f"truncated to 12 steps: MSE {short['mse']:.4f}")
