"""Throwaway torch twin of the SSL pipeline for fast data-design iteration.

Not part of the package; deleted before shipping.
"""
import sys
import time

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from concur import videos as V
from concur.config import desk_config
from concur.rng import Stream
from concur.sampling import augment, sample_clips, sample_window, temporal_span
from concur.videos import make_splits


def make_body():
    return nn.Sequential(
        nn.Conv3d(3, 8, 3, stride=(1, 2, 2), padding=1), nn.ReLU(),
        nn.Conv3d(8, 16, 3, stride=2, padding=1), nn.ReLU(),
        nn.Conv3d(16, 32, 3, stride=2, padding=1), nn.ReLU(),
    )


class Tower(nn.Module):
    def __init__(self):
        super().__init__()
        self.body = make_body()
        self.proj = nn.Sequential(nn.Linear(32, 64), nn.ReLU(), nn.Linear(64, 16))

    def feats(self, x):
        return self.body(x - 0.5).mean(dim=(2, 3, 4))

    def forward(self, x):
        return F.normalize(self.proj(self.feats(x)), dim=1)


def run_ssl(cfg, lr=0.03, epochs=30, seed=0, m=0.99, use_curriculum=True):
    torch.manual_seed(seed)
    train, test = make_splits(cfg.dataset)
    q_tower, k_tower = Tower(), Tower()
    k_tower.load_state_dict(q_tower.state_dict())
    for p in k_tower.parameters():
        p.requires_grad = False
    opt = torch.optim.SGD(q_tower.parameters(), lr=lr, momentum=0.9, weight_decay=1e-4)
    queue = np.zeros((cfg.loss.queue_capacity, 16), dtype=np.float32)
    fill = 0
    cursor = 0
    root = Stream.from_seed(seed)
    curr = cfg.curriculum.resolve(epochs)
    spe = len(train) // 8
    total = epochs * spe
    gstep = 0
    for epoch in range(epochs):
        span = min(64, max(8, temporal_span(epoch, curr) if use_curriculum else curr.max_span))
        order = root.child("order", epoch).permutation(len(train))
        for s in range(spe):
            wl = lr * min(1.0, gstep / (5 * spe))
            if gstep >= 5 * spe:
                wl = lr * 0.5 * (1 + np.cos(np.pi * (gstep - 5 * spe) / (total - 5 * spe)))
            for g in opt.param_groups:
                g["lr"] = wl
            batch = [train[i] for i in order[s * 8 : (s + 1) * 8]]
            views = []
            for slot, video in enumerate(batch):
                srng = root.child("sample", epoch, s, slot)
                window = sample_window(video.n_frames, span, srng.child("window"))
                clips = sample_clips(video, window, 2, 8, srng.child("clips"))
                views.extend(augment(c, cfg.augment, srng.child("aug", j)).frames for j, c in enumerate(clips))
            x = torch.tensor(np.stack(views))
            qe = q_tower(x)
            with torch.no_grad():
                ke = k_tower(x)
            loss = 0.0
            for i in range(8):
                qs, ks = qe[2 * i : 2 * i + 2], ke[2 * i : 2 * i + 2]
                for role in range(2):
                    pos = (qs[role] * ks[1 - role]).sum() / 0.07
                    if fill > 0:
                        negs = qs[role] @ torch.tensor(queue[:fill].T) / 0.07
                        allv = torch.cat([pos[None], negs])
                    else:
                        allv = pos[None]
                    loss = loss + (torch.logsumexp(allv, 0) - pos)
            loss = loss / 16
            opt.zero_grad()
            loss.backward()
            opt.step()
            with torch.no_grad():
                for pq, pk in zip(q_tower.parameters(), k_tower.parameters()):
                    pk.mul_(m).add_(pq, alpha=1 - m)
            kn = ke.numpy()
            n = len(kn)
            idxs = (cursor + np.arange(n)) % len(queue)
            queue[idxs] = kn
            cursor = (cursor + n) % len(queue)
            fill = min(len(queue), fill + n)
            gstep += 1
    # linear probe with sklearn on multiclip features (fast proxy)
    from sklearn.linear_model import LogisticRegression

    def feats_of(videos):
        out = []
        with torch.no_grad():
            for v in videos:
                X = np.stack([v.frames[:, i : i + 8] for i in [0, 19, 37, 56]])
                out.append(q_tower.feats(torch.tensor(X)).mean(0).numpy())
        return np.stack(out)

    Xtr, ytr = feats_of(train), np.array([v.label for v in train])
    Xte, yte = feats_of(test), np.array([v.label for v in test])
    clf = LogisticRegression(max_iter=3000).fit(Xtr, ytr)
    acc = clf.score(Xte, yte)
    # retrieval@1
    def unit(x):
        return x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), 1e-12)
    sims = unit(Xte) @ unit(Xtr).T
    r1 = (ytr[sims.argmax(1)] == yte).mean()
    return acc, r1


if __name__ == "__main__":
    variants = {
        "current": {},
        "sprite-dominant": dict(BG_AMPLITUDE=(0.03, 0.06), SPRITE_RADIUS=(2.2, 2.8), BG_PHASE_SPEED=(0.07, 0.095)),
        "high-freq-bg": dict(BG_AMPLITUDE=(0.03, 0.06), SPRITE_RADIUS=(2.2, 2.8), BG_FREQ_CHOICES=(2, 3, 4)),
        "single-wave": dict(BG_WAVE_COUNT=1, BG_AMPLITUDE=(0.04, 0.08), SPRITE_RADIUS=(2.2, 2.8)),
    }
    for name, over in variants.items():
        saved = {k: getattr(V, k) for k in over}
        for k, v in over.items():
            setattr(V, k, v)
        cfg = desk_config()
        t0 = time.time()
        acc, r1 = run_ssl(cfg, lr=float(sys.argv[1]) if len(sys.argv) > 1 else 0.03)
        print(f"{name}: linear(logreg) {acc:.3f} r@1 {r1:.3f} ({time.time()-t0:.0f}s)")
        for k, v in saved.items():
            setattr(V, k, v)
