use std::io::Write;
use std::path::Path;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Checkpoint, TrainConfig};
use crate::datakit::{augment_pair, normalize, PairSample};
use crate::error::{Error, Result};
use crate::evalkit::{evaluate, Basis, EvalReport};
use crate::img::Image;
use crate::matching::FlowField;
use crate::model::{ForwardCache, Network};
use crate::optim::AdamW;
use crate::supervision::{
    build_label_mask, dilate_mask, pair_objective, selection_ratio, GroundTruthFlow, LabelMask,
    PairLoss, PseudoTarget,
};

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub gt_loss: f64,
    pub pseudo_loss: f64,
    #[serde(rename = "R")]
    pub ratio: f64,
    pub val_pck: f64,
}

/// Best-validation checkpoint, the per-epoch log and the weights after the last epoch.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochRecord>,
    pub last: Network,
}

/// Both mutual teachers; `selected` indexes the one with the higher validation PCK.
#[derive(Clone, Debug)]
pub struct MutualOutcome {
    pub first: TrainOutcome,
    pub second: TrainOutcome,
    pub selected: usize,
}

impl MutualOutcome {
    pub fn selected(&self) -> &TrainOutcome {
        if self.selected == 0 {
            &self.first
        } else {
            &self.second
        }
    }
}

/// Writes one JSON object per line.
pub fn write_log(path: &Path, log: &[EpochRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for r in log {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Deterministic, augmentation-free PCK evaluation.
pub fn validate(model: &Network, data: &[PairSample], alphas: &[f64]) -> Result<EvalReport> {
    evaluate(model, data, alphas, Basis::Image)
}

fn val_pck(net: &Network, val: &[PairSample], alpha: f64) -> Result<f64> {
    if val.is_empty() {
        return Ok(0.0);
    }
    Ok(validate(net, val, &[alpha])?.overall[0])
}

/// Sparse and dilated supervision of one training pair on the flow grid.
struct Labels {
    mask: LabelMask,
    gt: GroundTruthFlow,
    dilated: LabelMask,
}

fn flow_grid(net: &Network, image: &Image) -> (usize, usize) {
    let cells = |n: usize| {
        let mut n = n;
        for _ in 0..net.config.backbone_channels.len() {
            n = n.div_ceil(2);
        }
        n * net.config.upsample
    };
    (cells(image.height), cells(image.width))
}

fn prepare_labels(net: &Network, data: &[PairSample], k: usize) -> Result<Vec<Labels>> {
    data.iter()
        .map(|s| {
            let (mask, gt) =
                build_label_mask(&s.keypoints, flow_grid(net, &s.target), net.flow_stride());
            let dilated = dilate_mask(&mask, k)?;
            Ok(Labels { mask, gt, dilated })
        })
        .collect()
}

fn check_data(cfg: &TrainConfig, train: &[PairSample], val: &[PairSample]) -> Result<()> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if train.iter().all(|s| s.keypoints.is_empty()) {
        return Err(Error::Config(
            "training set carries no keypoint annotations".into(),
        ));
    }
    if val.is_empty() {
        warn!("validation set is empty; checkpoint selection keeps the initialization");
    }
    Ok(())
}

/// Shuffling and augmentation streams, both derived from the config seed.
struct Streams {
    order: ChaCha8Rng,
    augment: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        Self {
            order: ChaCha8Rng::seed_from_u64(seed ^ 0x6f72_6465_7200_0000),
            augment: ChaCha8Rng::seed_from_u64(seed ^ 0x6175_676d_0000_0000),
        }
    }

    fn epoch_order(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut self.order);
        idx
    }

    fn inputs(&mut self, cfg: &TrainConfig, sample: &PairSample) -> Result<(Image, Image)> {
        let s = augment_pair(sample, &cfg.augment, &mut self.augment);
        Ok((normalize(&s.source)?, normalize(&s.target)?))
    }
}

/// Running sums for one epoch.
#[derive(Default)]
struct Totals {
    total: f64,
    gt: f64,
    pseudo: f64,
    pairs: usize,
}

impl Totals {
    fn add(&mut self, l: &PairLoss) {
        self.total += l.total;
        self.gt += l.gt;
        self.pseudo += l.pseudo;
        self.pairs += 1;
    }

    fn record(&self, epoch: usize, ratio: f64, val_pck: f64) -> EpochRecord {
        let n = self.pairs.max(1) as f64;
        EpochRecord {
            epoch,
            train_loss: self.total / n,
            gt_loss: self.gt / n,
            pseudo_loss: self.pseudo / n,
            ratio,
            val_pck,
        }
    }
}

/// One network under optimization plus its best-so-far snapshot.
struct Learner {
    net: Network,
    opt: AdamW,
    grads: Network,
    best: (usize, f64, Network),
    log: Vec<EpochRecord>,
}

impl Learner {
    fn new(cfg: &TrainConfig, seed: u64, val: &[PairSample]) -> Result<Self> {
        let net = Network::init(&cfg.model, seed)?;
        let sizes: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
        let opt = AdamW::new(cfg.optimizer, &sizes, net.backbone_tensors());
        let pck = val_pck(&net, val, cfg.val_alpha)?;
        info!("init seed {seed}: val PCK {pck:.4}");
        Ok(Self {
            grads: net.zeros_like(),
            best: (0, pck, net.clone()),
            net,
            opt,
            log: Vec::new(),
        })
    }

    fn accumulate(&mut self, cache: &ForwardCache, grad_flow: &[f64], scale: f64) -> Result<()> {
        let scaled: Vec<f64> = grad_flow.iter().map(|g| g * scale).collect();
        let g = self.net.backward(cache, &scaled)?;
        for (acc, p) in self.grads.params_mut().into_iter().zip(g.params()) {
            for (a, v) in acc.iter_mut().zip(p) {
                *a += v;
            }
        }
        Ok(())
    }

    fn step(&mut self) {
        let grads = std::mem::replace(&mut self.grads, self.net.zeros_like());
        self.opt.step(self.net.params_mut(), &grads.params());
    }

    fn end_epoch(
        &mut self,
        cfg: &TrainConfig,
        epoch: usize,
        ratio: f64,
        totals: &Totals,
        val: &[PairSample],
    ) -> Result<()> {
        let pck = val_pck(&self.net, val, cfg.val_alpha)?;
        let rec = totals.record(epoch, ratio, pck);
        info!(
            "epoch {epoch}: loss {:.4} (gt {:.4}, pseudo {:.4}) R {:.2} val PCK {:.4}",
            rec.train_loss, rec.gt_loss, rec.pseudo_loss, ratio, pck
        );
        self.log.push(rec);
        if pck > self.best.1 {
            self.best = (epoch, pck, self.net.clone());
        }
        Ok(())
    }

    fn finish(self, cfg: &TrainConfig) -> TrainOutcome {
        let (epoch, pck, net) = self.best;
        TrainOutcome {
            checkpoint: Checkpoint::new(cfg, &net, epoch, pck),
            log: self.log,
            last: self.net,
        }
    }
}

/// Shared single-network loop; `pseudo` holds one cached pseudo-label flow per training pair.
fn train_single(
    cfg: &TrainConfig,
    train: &[PairSample],
    val: &[PairSample],
    pseudo: Option<&[FlowField]>,
) -> Result<TrainOutcome> {
    let mut learner = Learner::new(cfg, cfg.seed, val)?;
    let labels = prepare_labels(&learner.net, train, cfg.dilation)?;
    let mut streams = Streams::new(cfg.seed);
    for epoch in 1..=cfg.epochs {
        let ratio = selection_ratio(epoch - 1, &cfg.selection);
        let mut totals = Totals::default();
        let order = streams.epoch_order(train.len());
        for batch in order.chunks(cfg.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (src, tgt) = streams.inputs(cfg, &train[i])?;
                let (flow, cache) = learner.net.forward(&src, &tgt)?;
                let lb = &labels[i];
                let target = pseudo.map(|p| PseudoTarget {
                    flow: &p[i],
                    mask: &lb.dilated,
                    ratio,
                });
                let loss = pair_objective(&flow, &lb.gt, &lb.mask, target, &cfg.loss)?;
                if totals.pairs == 0 {
                    debug!(
                        "pair {i}: gt {} + {} x pseudo {} over {} cells = {}",
                        loss.gt,
                        cfg.loss.lambda,
                        loss.pseudo,
                        loss.selected.len(),
                        loss.total
                    );
                }
                totals.add(&loss);
                learner.accumulate(&cache, &loss.grad, scale)?;
            }
            learner.step();
        }
        learner.end_epoch(cfg, epoch, ratio, &totals, val)?;
    }
    Ok(learner.finish(cfg))
}

/// Trains on sparse keypoint labels only and returns the best-validation checkpoint.
pub fn train_baseline(
    cfg: &TrainConfig,
    train: &[PairSample],
    val: &[PairSample],
) -> Result<TrainOutcome> {
    check_data(cfg, train, val)?;
    train_single(cfg, train, val, None)
}

/// Trains a fresh student against pseudo-labels predicted once by a frozen teacher.
pub fn train_single_offline_teacher(
    cfg: &TrainConfig,
    teacher: &Checkpoint,
    train: &[PairSample],
    val: &[PairSample],
) -> Result<TrainOutcome> {
    check_data(cfg, train, val)?;
    let t = &teacher.network;
    let student = Network::init(&cfg.model, cfg.seed)?;
    if t.config.in_channels != cfg.model.in_channels
        || t.config.backbone_channels.len() != cfg.model.backbone_channels.len()
        || t.config.upsample != cfg.model.upsample
    {
        return Err(Error::Config(
            "teacher and student produce flows on different grids".into(),
        ));
    }
    let mut flows = Vec::with_capacity(train.len());
    for s in train {
        let f = t.predict(&normalize(&s.source)?, &normalize(&s.target)?)?;
        let (h, w) = flow_grid(&student, &s.target);
        if (f.height, f.width) != (h, w) {
            return Err(Error::Config(format!(
                "teacher flow is {}x{}, student grid is {h}x{w}",
                f.height, f.width
            )));
        }
        flows.push(f);
    }
    train_single(cfg, train, val, Some(&flows))
}

/// Trains two networks from distinct initializations; each uses the other's detached prediction
/// as its pseudo-label on the shared dilated mask. Both see identical batches.
pub fn train_mutual_online_teachers(
    cfg: &TrainConfig,
    train: &[PairSample],
    val: &[PairSample],
) -> Result<MutualOutcome> {
    check_data(cfg, train, val)?;
    let (s1, s2) = cfg.mt_seeds();
    if s1 == s2 {
        return Err(Error::Config(
            "mutual teachers need distinct initialization seeds".into(),
        ));
    }
    let mut nets = [Learner::new(cfg, s1, val)?, Learner::new(cfg, s2, val)?];
    let labels = prepare_labels(&nets[0].net, train, cfg.dilation)?;
    let mut streams = Streams::new(cfg.seed);
    for epoch in 1..=cfg.epochs {
        let ratio = selection_ratio(epoch - 1, &cfg.selection);
        let mut totals = [Totals::default(), Totals::default()];
        let order = streams.epoch_order(train.len());
        for batch in order.chunks(cfg.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (src, tgt) = streams.inputs(cfg, &train[i])?;
                let (f0, c0) = nets[0].net.forward(&src, &tgt)?;
                let (f1, c1) = nets[1].net.forward(&src, &tgt)?;
                let lb = &labels[i];
                // each prediction is a plain value here, so no gradient reaches the peer
                let peer = |flow| PseudoTarget {
                    flow,
                    mask: &lb.dilated,
                    ratio,
                };
                let l0 = pair_objective(&f0, &lb.gt, &lb.mask, Some(peer(&f1)), &cfg.loss)?;
                let l1 = pair_objective(&f1, &lb.gt, &lb.mask, Some(peer(&f0)), &cfg.loss)?;
                totals[0].add(&l0);
                totals[1].add(&l1);
                nets[0].accumulate(&c0, &l0.grad, scale)?;
                nets[1].accumulate(&c1, &l1.grad, scale)?;
            }
            nets[0].step();
            nets[1].step();
        }
        for (n, t) in nets.iter_mut().zip(&totals) {
            n.end_epoch(cfg, epoch, ratio, t, val)?;
        }
    }
    let [a, b] = nets;
    let (first, second) = (a.finish(cfg), b.finish(cfg));
    let selected = usize::from(second.checkpoint.val_pck > first.checkpoint.val_pck);
    Ok(MutualOutcome {
        first,
        second,
        selected,
    })
}
