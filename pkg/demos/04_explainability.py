"""Export back-mapped attention weights for a forecasting model.

Each encoding layer yields one attention vector per feature over its D
representation positions. The static transposed convolution pushes those
weights back onto the T input steps, so you can see which parts of the
history the forecast leaned on. Output: one CSV (and SVG) per feature
under demos/output/.
"""

from pathlib import Path

from tsrm import (
    FinetuneObjective,
    ModelConfig,
    PretrainObjective,
    TaskSpec,
    TrainConfig,
    TsrmModel,
    export_attention,
    prepare_finetune,
    synth_dataset,
    train,
)

INPUT_LEN, HORIZON = 96, 24

config = ModelConfig(T=INPUT_LEN, F=1, f_embed=32, n_layers=2, heads=2,
                     branches=[{"kernel": 5, "dilation": 1}], dropout_p=0.0)
model = TsrmModel(config, seed=0)
objective = PretrainObjective(synth_dataset("sine", T=INPUT_LEN, F=1, n=128, seed=1),
                              synth_dataset("sine", T=INPUT_LEN, F=1, n=32, seed=2),
                              batch_size=8)
model, _ = train(model, objective, TrainConfig(max_epochs=15, batch_size=8, seed=0,
                                               scheduler_patience=8,
                                               early_stop_patience=15))

task = TaskSpec("forecast", horizon=HORIZON, input_len=INPUT_LEN)
model = prepare_finetune(model, task)
fc = synth_dataset("sine", T=INPUT_LEN + HORIZON, F=1, n=128, seed=3)
fc_val = synth_dataset("sine", T=INPUT_LEN + HORIZON, F=1, n=32, seed=4)
model, _ = train(model, FinetuneObjective(task, fc, fc_val, batch_size=8),
                 TrainConfig(max_epochs=25, batch_size=8, seed=0,
                             scheduler_patience=8, early_stop_patience=25))

sample = synth_dataset("sine", T=INPUT_LEN + HORIZON, F=1, n=4, seed=5)
out_dir = Path(__file__).parent / "output"
paths = export_attention(model, sample.values[0], sample.observed[0], out_dir,
                         svg=True)
print("wrote:")
for p in paths:
    print(" ", p)
print("\nCSV columns: t, input_value (-1 marks the hidden horizon), "
      "output_value, weight_sum, weight_layer_1..N")
print("The SVG shows input/output lines with red attention bars.")
