"""
Force calibration on synthetic data
===================================

Extract features for a small set of sphere indentations, label them with a
known linear model plus noise, fit the model back and report the fit.
"""

import numpy as np

from tactflow.force import calibrate, range_matched_model
from tactflow.pipeline import scenario_features
from tactflow.simulator import REFERENCE_A_SHAPE, protocol_scenarios, synth_force_dataset

# every 9th pose of the full grid keeps this quick
scenarios = protocol_scenarios()[::9]
features = [scenario_features(sc) for sc in scenarios]
truth = range_matched_model(REFERENCE_A_SHAPE, features)
data = synth_force_dataset(truth, scenarios, noise=0.1, features=features, seed=0)

model, report = calibrate(data)
print(f"{report.n_train} training / {report.n_test} test samples")
for fit in report.axes:
    print(f"{fit.axis:7s} adjusted R2 {fit.adjusted_r2:.4f}  RMSE {fit.rmse:.3f} N")

for i in report.test_index[:5]:
    pred = model.predict(data[i].features_X)
    print("measured", np.round(data[i].measured_F, 2), " predicted", np.round(pred, 2))
