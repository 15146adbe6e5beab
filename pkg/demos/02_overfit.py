"""Train the association network on 8 frames until it memorises them.

This is the quickest end-to-end check that embeddings, losses and the
optimiser fit together. Takes several minutes on one CPU core.

Run:  python demos/02_overfit.py [iterations]
"""

import sys

from radcam import learn, nnet
from radcam.infereval import evaluate_frames
from radcam.scenesim import SimConfig, generate_dataset

iters = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
frames = generate_dataset(SimConfig(n_frames=8), seed=123)
net = nnet.AssociationNet(nnet.NetworkConfig())


def show(it, row):
    if it % 200 == 0:
        print(f"iter {it:5d}  pull {row['pull']:.4f}  push {row['push']:.4f}  ord {row['ord']:.4f}")


net, log = learn.train(frames, net, learn.LossConfig(), learn.TrainConfig(total_iters=iters), progress=show)
preds = learn.predict(net, frames)
print("final pull + push:", log.rows[-1]["pull"] + log.rows[-1]["push"])
print("P/R/F1 on the training frames (against their labels):", evaluate_frames(preds, frames, "labels").summary())
