"""
## A forest cascade and its checkpoint ensemble

Each layer trains on the raw features plus the previous layer's out-of-fold
class probabilities. Prediction can take one layer (picked on validation data)
or average every layer's output.
"""

import numpy as np
from sklearn.datasets import load_breast_cancer

from augdf import (CascadeParams, ForestParams, Policy, accuracy, from_arrays, new_model,
                   predict_checkpoint_ensemble, predict_layers, select_output_layer_cv, stratified_split,
                   train_layer)

bc = load_breast_cancer()
ds = from_arrays(bc.data, bc.target)
train, test = stratified_split(ds, 0.25, seed=0)
fit, val = stratified_split(train, 0.25, seed=1)

params = CascadeParams((ForestParams(50, "bagged"), ForestParams(50, "extra")), k_folds=3, max_layers=6)
model = new_model(ds.d, ds.C, params)
for i in range(params.max_layers):
    model = train_layer(model, fit, Policy(0.0, 1.0), seed=i)
    print(f"layer {i + 1}: input width {model.layers[-1].input_width}")

curve = [accuracy(P, test.labels) for P in predict_layers(model, test.X)]
print("test accuracy per layer:", np.round(curve, 4))

o = select_output_layer_cv(model, val)
print(f"layer picked on validation: {o} -> test {curve[o - 1]:.4f}")
print(f"checkpoint ensemble        : test {accuracy(predict_checkpoint_ensemble(model, test.X), test.labels):.4f}")

# the ensemble is the plain mean of the layer outputs
P = predict_layers(model, test.X)
print("max |CE - mean|:", np.abs(predict_checkpoint_ensemble(model, test.X) - np.mean(P, 0)).max())
