"""
How the group weights react to training losses
===============================================

Each group's predictions are scaled by tanh((min loss / group loss)^gamma).
The easiest group keeps tanh(1); harder groups get smaller scores, which
inflates their Dice loss and so their share of the gradient.
"""

import numpy as np

from fairseg.loss import GroupWeights, febs_update, febs_weights

losses = np.array([0.20, 0.35, 0.80])
for gamma in (0.0, 0.5, 1.0, 2.0):
    print(f"gamma={gamma}:", np.round(febs_weights(losses, gamma), 4))

# Running losses are exponential moving averages; the first observation seeds them.
gw = GroupWeights.initial(("asian", "black", "white"))
print("\nstart", gw.weights.round(4))
stream = [
    {0: (0.3, 4), 2: (0.3, 20)},        # no black samples in this batch
    {0: (0.3, 3), 1: (0.9, 5), 2: (0.3, 24)},
    {1: (0.5, 6), 2: (0.25, 26)},
]
for step, batch in enumerate(stream, 1):
    gw = febs_update(gw, batch)
    print(f"step {step}: loss {np.round(gw.running_loss, 3)}  weight {np.round(gw.weights, 4)}")
