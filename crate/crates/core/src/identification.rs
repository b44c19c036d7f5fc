//! Fusing the three window predictions and the end-to-end identify path.
//!
//! Each window votes for the argmax of its score vector (lowest class index
//! on ties). A label with at least two votes wins outright. With three
//! different labels the winner is the label of the window holding the single
//! largest activation across the three vectors, ties going to the lowest
//! window index and then the lowest class index. Reported confidence is the
//! mean of the winning class's score over the three windows.

use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::dataset::IdentityId;
use crate::detection::{self, BoundingBox, Detection, DetectorBackend, RawDetection};
use crate::imaging::SourceImage;
use crate::inference::{self, ClassifierBackend, ScoreVector};
use crate::windowing::{self, Window};
use crate::{Error, Result, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionRule {
    Majority,
    StrongestActivation,
}

/// How the no-majority case is resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VotingVariant {
    /// Label of the window with the largest single activation.
    #[default]
    MaxSingle,
    /// Among the three window labels, the one with the largest score summed
    /// over the windows (lowest class index on ties).
    SumScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vote {
    pub class_index: usize,
    pub confidence: f64,
    pub window_labels: [usize; 3],
    pub decision_rule: DecisionRule,
}

/// Fuses three raw score slices. Scores need not be normalized, which is
/// what the invariance tests rely on.
pub fn fuse(scores: [&[f64]; 3], variant: VotingVariant) -> Result<Vote> {
    let k = scores[0].len();
    if k == 0 {
        return Err(Error::InvalidArgument("cannot vote over zero classes".into()));
    }
    if let Some(s) = scores.iter().find(|s| s.len() != k) {
        return Err(Error::LengthMismatch {
            expected: k,
            actual: s.len(),
        });
    }
    let labels = scores.map(inference::argmax);
    let majority = if labels[0] == labels[1] || labels[0] == labels[2] {
        Some(labels[0])
    } else if labels[1] == labels[2] {
        Some(labels[1])
    } else {
        None
    };
    let (class_index, decision_rule) = match majority {
        Some(c) => (c, DecisionRule::Majority),
        None => {
            let winner = match variant {
                VotingVariant::MaxSingle => {
                    let mut best = 0;
                    for w in 1..3 {
                        if scores[w][labels[w]] > scores[best][labels[best]] {
                            best = w;
                        }
                    }
                    labels[best]
                }
                VotingVariant::SumScores => {
                    let total = |c: usize| scores.iter().map(|s| s[c]).sum::<f64>();
                    let mut candidates = labels;
                    candidates.sort_unstable();
                    let mut best = candidates[0];
                    for &c in &candidates[1..] {
                        if total(c) > total(best) {
                            best = c;
                        }
                    }
                    best
                }
            };
            (winner, DecisionRule::StrongestActivation)
        }
    };
    let confidence = scores.iter().map(|s| s[class_index]).sum::<f64>() / 3.0;
    Ok(Vote {
        class_index,
        confidence,
        window_labels: labels,
        decision_rule,
    })
}

pub fn vote(scores: &[ScoreVector; 3]) -> Result<Vote> {
    vote_with(scores, VotingVariant::MaxSingle)
}

pub fn vote_with(scores: &[ScoreVector; 3], variant: VotingVariant) -> Result<Vote> {
    fuse(
        [scores[0].as_slice(), scores[1].as_slice(), scores[2].as_slice()],
        variant,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityPrediction {
    pub identity: IdentityId,
    pub class_index: usize,
    pub confidence: f64,
    pub window_labels: [usize; 3],
    pub window_scores: [ScoreVector; 3],
    pub window_regions: [BoundingBox; 3],
    pub decision_rule: DecisionRule,
    pub detection: Detection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoPrediction {
    NoDogDetected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum IdentifyOutcome {
    Identified { prediction: Box<IdentityPrediction> },
    NotIdentified { reason: NoPrediction },
}

impl IdentifyOutcome {
    pub fn prediction(&self) -> Option<&IdentityPrediction> {
        match self {
            IdentifyOutcome::Identified { prediction } => Some(prediction),
            IdentifyOutcome::NotIdentified { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentifyConfig {
    pub min_confidence: f64,
    pub input_side: u32,
    pub dog_class: String,
    pub voting_variant: VotingVariant,
}

impl Default for IdentifyConfig {
    fn default() -> Self {
        Self {
            min_confidence: detection::DEFAULT_MIN_CONFIDENCE,
            input_side: windowing::DEFAULT_INPUT_SIDE,
            dog_class: detection::DOG_CLASS.into(),
            voting_variant: VotingVariant::MaxSingle,
        }
    }
}

fn dog_detections(
    image: &SourceImage,
    detector: &dyn DetectorBackend,
    config: &IdentifyConfig,
) -> Result<Vec<Detection>> {
    let all = detection::detect(image, detector).map_err(|e| e.at_stage(Stage::Detect))?;
    Ok(detection::filter_class(&all, &config.dog_class, config.min_confidence))
}

fn identify_detection(
    image: &SourceImage,
    det: &Detection,
    classifier: &dyn ClassifierBackend,
    config: &IdentifyConfig,
) -> Result<IdentityPrediction> {
    let windows = windowing::extract_windows(&image.pixels, &det.bbox, config.input_side)
        .map_err(|e| e.at_stage(Stage::Window))?
        .map(|w| Window {
            source: Some(image.key.clone()),
            ..w
        });
    let scores = inference::classify_batch(&windows, classifier).map_err(|e| e.at_stage(Stage::Classify))?;
    let window_scores: [ScoreVector; 3] = scores
        .try_into()
        .map_err(|_| Error::InvalidArgument("expected three score vectors".into()).at_stage(Stage::Classify))?;
    let vote = vote_with(&window_scores, config.voting_variant).map_err(|e| e.at_stage(Stage::Vote))?;
    let identity = classifier
        .identities()
        .get(vote.class_index)
        .cloned()
        .ok_or_else(|| {
            Error::Classifier(format!("class {} has no enrolled identity", vote.class_index))
                .at_stage(Stage::Vote)
        })?;
    Ok(IdentityPrediction {
        identity,
        class_index: vote.class_index,
        confidence: vote.confidence,
        window_labels: vote.window_labels,
        window_scores,
        window_regions: windows.map(|w| w.region),
        decision_rule: vote.decision_rule,
        detection: det.clone(),
    })
}

/// detect → filter → select primary → windows → classify → vote.
pub fn identify(
    image: &SourceImage,
    detector: &dyn DetectorBackend,
    classifier: &dyn ClassifierBackend,
    config: &IdentifyConfig,
) -> Result<IdentifyOutcome> {
    let dogs = dog_detections(image, detector, config)?;
    let Some(primary) = detection::select_primary(&dogs) else {
        return Ok(IdentifyOutcome::NotIdentified {
            reason: NoPrediction::NoDogDetected,
        });
    };
    let prediction = identify_detection(image, primary, classifier, config)?;
    Ok(IdentifyOutcome::Identified {
        prediction: Box::new(prediction),
    })
}

/// One prediction per dog detection, in descending detection confidence.
pub fn identify_all(
    image: &SourceImage,
    detector: &dyn DetectorBackend,
    classifier: &dyn ClassifierBackend,
    config: &IdentifyConfig,
) -> Result<Vec<IdentityPrediction>> {
    dog_detections(image, detector, config)?
        .iter()
        .map(|d| identify_detection(image, d, classifier, config))
        .collect()
}

struct GatedDetector {
    inner: Arc<dyn DetectorBackend>,
    gate: Mutex<()>,
}

impl DetectorBackend for GatedDetector {
    fn detect_raw(&self, image: &SourceImage) -> Result<Vec<RawDetection>> {
        if self.inner.concurrent() {
            self.inner.detect_raw(image)
        } else {
            let _g = self.gate.lock().unwrap_or_else(|p| p.into_inner());
            self.inner.detect_raw(image)
        }
    }
}

struct GatedClassifier {
    inner: Arc<dyn ClassifierBackend>,
    gate: Mutex<()>,
}

impl ClassifierBackend for GatedClassifier {
    fn input_side(&self) -> u32 {
        self.inner.input_side()
    }

    fn identities(&self) -> &[IdentityId] {
        self.inner.identities()
    }

    fn scores(&self, window: &Window) -> Result<Vec<f64>> {
        if self.inner.concurrent() {
            self.inner.scores(window)
        } else {
            let _g = self.gate.lock().unwrap_or_else(|p| p.into_inner());
            self.inner.scores(window)
        }
    }
}

/// Backends plus configuration, shareable across threads. Calls into a
/// backend that does not declare itself concurrent are serialized.
pub struct Pipeline {
    detector: GatedDetector,
    classifier: GatedClassifier,
    config: IdentifyConfig,
}

impl Pipeline {
    pub fn new(
        detector: Arc<dyn DetectorBackend>,
        classifier: Arc<dyn ClassifierBackend>,
        config: IdentifyConfig,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&config.min_confidence) {
            return Err(Error::Config(format!(
                "min_confidence {} outside [0, 1]",
                config.min_confidence
            )));
        }
        if config.input_side != classifier.input_side() {
            return Err(Error::Config(format!(
                "input_side {} differs from classifier input side {}",
                config.input_side,
                classifier.input_side()
            )));
        }
        Ok(Self {
            detector: GatedDetector {
                inner: detector,
                gate: Mutex::new(()),
            },
            classifier: GatedClassifier {
                inner: classifier,
                gate: Mutex::new(()),
            },
            config,
        })
    }

    pub fn config(&self) -> &IdentifyConfig {
        &self.config
    }

    pub fn identities(&self) -> &[IdentityId] {
        self.classifier.identities()
    }

    pub fn detect(&self, image: &SourceImage) -> Result<Vec<Detection>> {
        detection::detect(image, &self.detector)
    }

    pub fn identify(&self, image: &SourceImage) -> Result<IdentifyOutcome> {
        identify(image, &self.detector, &self.classifier, &self.config)
    }

    pub fn identify_all(&self, image: &SourceImage) -> Result<Vec<IdentityPrediction>> {
        identify_all(image, &self.detector, &self.classifier, &self.config)
    }
}

/// Serialized form of a prediction: top-5 scores per window instead of full
/// vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionDocument {
    pub identity: IdentityId,
    pub class_index: usize,
    pub confidence: f64,
    pub decision_rule: DecisionRule,
    pub detection: Detection,
    pub windows: Vec<WindowEvidence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowEvidence {
    pub ordinal: usize,
    pub region: BoundingBox,
    pub label: usize,
    pub label_identity: IdentityId,
    pub top: Vec<ScoredIdentity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredIdentity {
    pub class_index: usize,
    pub identity: IdentityId,
    pub score: f64,
}

pub const TOP_SCORES: usize = 5;

impl PredictionDocument {
    pub fn new(p: &IdentityPrediction, identities: &[IdentityId]) -> Self {
        let name = |c: usize| {
            identities
                .get(c)
                .cloned()
                .unwrap_or_else(|| IdentityId::new(format!("class_{c}")).expect("non-empty"))
        };
        let windows = (0..3)
            .map(|i| WindowEvidence {
                ordinal: i,
                region: p.window_regions[i],
                label: p.window_labels[i],
                label_identity: name(p.window_labels[i]),
                top: p.window_scores[i]
                    .top(TOP_SCORES)
                    .into_iter()
                    .map(|(c, score)| ScoredIdentity {
                        class_index: c,
                        identity: name(c),
                        score,
                    })
                    .collect(),
            })
            .collect();
        Self {
            identity: p.identity.clone(),
            class_index: p.class_index,
            confidence: p.confidence,
            decision_rule: p.decision_rule,
            detection: p.detection.clone(),
            windows,
        }
    }
}
