use super::{decode_indices, decode_sparse, tags, Message, MessageKind};
use crate::error::{Error, Result};
use crate::kernel::{self, Columns, FeatureShard, ResponseShard, SparseVector};
use crate::screening::ShardEdpp;

/// The institution side of the protocol: owns one private shard and answers
/// aggregate queries about it.
///
/// Only feature-space vectors and scalars ever leave this type; per-row
/// quantities such as the local dual slice stay in [`ShardEdpp`].
#[derive(Debug)]
pub struct Institution {
    base_a: FeatureShard,
    base_y: ResponseShard,
    /// Subsampled and/or standardized working copy.
    active: Option<(FeatureShard, ResponseShard)>,
    model: SparseVector,
    mask: Option<Vec<usize>>,
    edpp: ShardEdpp,
    work: u64,
    pending_error: Option<String>,
    shutdown: bool,
}

impl Institution {
    pub fn new(a: FeatureShard, y: ResponseShard) -> Result<Self> {
        if y.len() != a.rows() {
            return Err(Error::Dimension(format!(
                "shard {} has {} rows but {} responses",
                a.shard_id(),
                a.rows(),
                y.len()
            )));
        }
        let p = a.cols();
        Ok(Self {
            base_a: a,
            base_y: y,
            active: None,
            model: SparseVector::zeros(p),
            mask: None,
            edpp: ShardEdpp::default(),
            work: 0,
            pending_error: None,
            shutdown: false,
        })
    }

    pub fn shard_id(&self) -> u32 {
        self.base_a.shard_id()
    }

    pub fn feature_count(&self) -> usize {
        self.base_a.cols()
    }

    /// Rows of the unmodified shard.
    pub fn rows(&self) -> usize {
        self.base_a.rows()
    }

    pub fn model(&self) -> &SparseVector {
        &self.model
    }

    pub fn shutdown_requested(&self) -> bool {
        self.shutdown
    }

    /// Column evaluations (length-`n_i` column passes) performed so far.
    pub fn work(&self) -> u64 {
        self.work
    }

    fn data(&self) -> (&FeatureShard, &[f64]) {
        match &self.active {
            Some((a, y)) => (a, y.values()),
            None => (&self.base_a, self.base_y.values()),
        }
    }

    /// Processes one message. Queries return a reply (possibly an error
    /// reply); broadcasts return `None`.
    pub fn handle(&mut self, msg: &Message) -> Option<Message> {
        match msg.kind {
            MessageKind::Broadcast => {
                if let Err(e) = self.apply_broadcast(msg) {
                    self.pending_error.get_or_insert(e.to_string());
                }
                None
            }
            MessageKind::VectorSum | MessageKind::ScalarSum => {
                let result = match self.pending_error.take() {
                    Some(e) => Err(Error::Protocol(format!("earlier broadcast failed: {e}"))),
                    None => self.answer(msg),
                };
                Some(match result {
                    Ok(payload) => Message::new(msg.round_id, msg.kind, &msg.tag, payload),
                    Err(e) => Message::new(
                        msg.round_id,
                        MessageKind::Error,
                        &format!("shard {}: {e}", self.shard_id()),
                        Vec::new(),
                    ),
                })
            }
            MessageKind::Error => Some(Message::new(
                msg.round_id,
                MessageKind::Error,
                "workers do not accept error frames",
                Vec::new(),
            )),
        }
    }

    fn apply_broadcast(&mut self, msg: &Message) -> Result<()> {
        let p = self.feature_count();
        match msg.tag.as_str() {
            tags::MODEL => {
                let x = decode_sparse(&msg.payload)?;
                if x.len() != p {
                    return Err(Error::Dimension(format!("model of length {} for p = {p}", x.len())));
                }
                self.model = x;
            }
            tags::MASK => {
                let cols = decode_indices(&msg.payload)?;
                if cols.iter().any(|&j| j >= p) {
                    return Err(Error::Dimension("mask column out of range".into()));
                }
                self.mask = Some(cols);
            }
            tags::UNMASK => self.mask = None,
            tags::SUBSAMPLE => {
                let ids: Vec<u64> = decode_indices(&msg.payload)?
                    .into_iter()
                    .map(|i| i as u64)
                    .collect();
                let local: Vec<usize> = self
                    .base_a
                    .row_ids()
                    .iter()
                    .enumerate()
                    .filter(|(_, id)| ids.binary_search(id).is_ok())
                    .map(|(r, _)| r)
                    .collect();
                self.active = Some((
                    self.base_a.select_rows(&local),
                    self.base_y.select_rows(&local),
                ));
            }
            tags::STANDARDIZE => {
                if msg.payload.len() != 2 * p + 1 {
                    return Err(Error::Dimension("standardize payload must be 2p + 1".into()));
                }
                let (a, y) = self.data();
                let n = a.rows();
                let (means, rest) = msg.payload.split_at(p);
                let (scales, y_mean) = rest.split_at(p);
                let mut values = Vec::with_capacity(n * p);
                for j in 0..p {
                    values.extend(a.column(j).iter().map(|v| (v - means[j]) * scales[j]));
                }
                let ids = a.row_ids().to_vec();
                let sid = a.shard_id();
                let y: Vec<f64> = y.iter().map(|v| v - y_mean[0]).collect();
                let a = if n == 0 {
                    a.select_rows(&[])
                } else {
                    FeatureShard::new(sid, n, p, values)?.with_row_ids(ids)?
                };
                self.active = Some((a, ResponseShard::new(sid, y)));
            }
            tags::RESET => {
                self.active = None;
                self.mask = None;
                self.model = SparseVector::zeros(p);
                self.edpp = ShardEdpp::default();
            }
            tags::SHUTDOWN => self.shutdown = true,
            other => return Err(Error::Protocol(format!("unknown broadcast tag {other:?}"))),
        }
        Ok(())
    }

    fn answer(&mut self, msg: &Message) -> Result<Vec<f64>> {
        let scalar = |v: f64| Ok(vec![v]);
        let p = self.feature_count() as u64;
        let nnz = self.model.nnz() as u64;
        match msg.tag.as_str() {
            tags::CORRELATION => {
                self.work += p;
                let (a, y) = self.data();
                Ok(kernel::transpose_apply(a, y))
            }
            tags::COLUMN_NORMS => {
                self.work += p;
                Ok(kernel::column_sq_norms(self.data().0))
            }
            tags::COLUMN_SUMS => {
                self.work += p;
                let a = self.data().0;
                let ones = vec![1.0; a.rows()];
                Ok(kernel::transpose_apply(a, &ones))
            }
            tags::RESPONSE_NORM => {
                let y = self.data().1;
                scalar(kernel::dot(y, y))
            }
            tags::RESPONSE_SUM => scalar(self.data().1.iter().sum()),
            tags::ROWS => scalar(self.data().0.rows() as f64),
            tags::WORK => scalar(self.work as f64),
            tags::PIVOT => {
                let j = single_index(&msg.payload)?;
                self.work += 1;
                let (a, y) = match &self.active {
                    Some((a, y)) => (a, y.values()),
                    None => (&self.base_a, self.base_y.values()),
                };
                scalar(self.edpp.pivot(a, y, j)?)
            }
            tags::EDPP_S => {
                let [lambda_k, lambda_prev, lambda_max, sign_t] = msg.payload[..] else {
                    return Err(Error::Protocol("S query expects 4 values".into()));
                };
                self.work += nnz;
                let (a, y) = match &self.active {
                    Some((a, y)) => (a, y.values()),
                    None => (&self.base_a, self.base_y.values()),
                };
                scalar(self.edpp.prepare(
                    a,
                    y,
                    &self.model,
                    lambda_k,
                    lambda_prev,
                    lambda_max,
                    sign_t,
                )?)
            }
            tags::EDPP_V1V2 => scalar(self.edpp.v1_dot_v2()?),
            tags::EDPP_PERP_NORM => {
                let [c, s] = msg.payload[..] else {
                    return Err(Error::Protocol("v2pn query expects 2 values".into()));
                };
                scalar(self.edpp.project(c, s)?)
            }
            tags::EDPP_ORTHO => scalar(self.edpp.v1_dot_v2perp()?),
            tags::EDPP_SCORES => {
                self.work += p;
                let a = match &self.active {
                    Some((a, _)) => a,
                    None => &self.base_a,
                };
                self.edpp.scores(a)
            }
            tags::GRADIENT => {
                let (a, y) = self.data();
                let out = match &self.mask {
                    Some(cols) => kernel::partial_gradient_on(a, y, &self.model, cols)?,
                    None => kernel::partial_gradient(a, y, &self.model)?,
                };
                self.work += nnz + out.len() as u64;
                Ok(out)
            }
            tags::FULL_GRADIENT => {
                self.work += nnz + p;
                let (a, y) = self.data();
                kernel::partial_gradient(a, y, &self.model)
            }
            tags::RSS => {
                self.work += nnz;
                let (a, y) = self.data();
                let r = kernel::residual(a, y, &self.model)?;
                scalar(kernel::dot(&r, &r))
            }
            tags::GRAM => {
                let (a, _) = self.data();
                let all: Vec<usize>;
                let cols = match &self.mask {
                    Some(c) => c.as_slice(),
                    None => {
                        all = (0..a.cols()).collect();
                        &all
                    }
                };
                if msg.payload.len() != cols.len() {
                    return Err(Error::Dimension(format!(
                        "gram vector has {} entries for {} active columns",
                        msg.payload.len(),
                        cols.len()
                    )));
                }
                let au = kernel::apply_on(a, cols, &msg.payload);
                let out = kernel::transpose_apply_on(a, &au, cols);
                self.work += 2 * cols.len() as u64;
                Ok(out)
            }
            other => Err(Error::Protocol(format!("unknown query tag {other:?}"))),
        }
    }
}

fn single_index(payload: &[f64]) -> Result<usize> {
    match payload {
        [v] => super::as_index(*v).ok_or_else(|| Error::Protocol(format!("bad index {v}"))),
        _ => Err(Error::Protocol("expected a single index".into())),
    }
}
