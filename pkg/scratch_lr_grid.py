import sys, time
sys.path.insert(0, "src")
import numpy as np
from rcfd.codec import quant_table, blockwise_dct, round_half_away, _DCT_M, _from_blocks, _pad_to_block_multiple
from rcfd.features import image_features
from rcfd.net import init_network, forward, backward, sgd_step, batch_loss

ROUND_PIXELS = True

def compress_f(image, quality):
    m, n = image.shape
    table = quant_table(quality).astype(float)
    padded = _pad_to_block_multiple(image)
    q = round_half_away(blockwise_dct(padded - 128.0) / table)
    blocks = np.einsum("ux,mnuv,vy->mnxy", _DCT_M, q * table, _DCT_M, optimize=True)
    out = np.clip(_from_blocks(blocks) + 128.0, 0, 255)
    if ROUND_PIXELS:
        out = round_half_away(out)
    return out[:m, :n]

def texture(h, w, seed):
    rng = np.random.default_rng(seed)
    y = np.arange(h)[:, None]; x = np.arange(w)[None, :]
    img = np.zeros((h, w))
    for _ in range(10):
        fy, fx = rng.uniform(0.005, 0.35, size=2)
        img += rng.uniform(1.0, 10.0) * np.sin(2*np.pi*(fy*y + fx*x) + rng.uniform(0, 2*np.pi))
    img += rng.normal(0, 2.0, size=(h, w))
    return np.clip(np.round(img + 128), 0, 255)

def build(q1, q2, n_img):
    Xs, ys, gs = [], [], []
    for i in range(n_img):
        src = texture(128, 128, 1000 + i)
        sc = compress_f(src, q1); dc = compress_f(sc, q2)
        for f, lab in ((image_features(sc), 0), (image_features(dc), 1)):
            Xs.append(f); ys.append(np.full(len(f), lab, dtype=np.int64)); gs.append(np.full(len(f), i))
    return np.concatenate(Xs), np.concatenate(ys), np.concatenate(gs)

def run(X, y, g, n_img, lr, epochs, batch=128, dropout=0.5, seed=0):
    rng = np.random.default_rng(seed)
    ids = rng.permutation(n_img)
    val_ids = ids[: max(1, round(0.1 * n_img))]
    val = np.isin(g, val_ids); tr = ~val
    mu, sd = X[tr].mean(0), np.maximum(X[tr].std(0), 1e-8)
    Xn = (X - mu) / sd
    net = init_network(seed, dropout_rate=dropout)
    idx = np.flatnonzero(tr)
    best = 0.0
    for ep in range(epochs):
        order = rng.permutation(idx)
        losses = []
        for s in range(0, len(order), batch):
            bi = order[s : s + batch]
            acts = forward(net, Xn[bi], training=True, rng=rng)
            losses.append(batch_loss(acts.probs, y[bi]))
            sgd_step(net, backward(net, acts, y[bi]), lr)
        vi = np.flatnonzero(val)
        preds = np.concatenate([np.argmax(forward(net, Xn[vi[s:s+4096]]).probs, 1) for s in range(0, len(vi), 4096)])
        acc = (preds == y[vi]).mean()
        best = max(best, acc)
        print(f"    ep{ep+1:02d} loss={np.mean(losses):.4f} val={acc:.3f}", flush=True)
    return best

if __name__ == "__main__":
    n_img = 20
    for (q1, q2) in [(55, 95)]:
        X, y, g = build(q1, q2, n_img)
        for lr in (0.05, 0.2, 0.5):
            t0 = time.perf_counter()
            print(f"QF {q1}->{q2} rounding lr={lr}:", flush=True)
            best = run(X, y, g, n_img, lr, epochs=14)
            print(f"  best={best:.3f} ({time.perf_counter()-t0:.0f}s)", flush=True)
