//! Seeded generator of template chest-radiograph findings/impression pairs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::corpus::CorpusRecord;

/// Clinical word list the surrogate vocabulary is seeded with. Covers every
/// word the generator can emit plus general radiology terms.
pub const LEXICON: &str = "\
abdomen abnormal abnormality above acute adenopathy air airspace alignment and angle anterior aorta aortic apex \
apical appearance appreciated are area areas arch artery as aspiration at atelectasis atrial base bases basilar \
bibasilar bilateral bilaterally blunting bone bones both bowel brachiocephalic bronchial bronchiectasis but by \
calcification calcifications calcified cardiac cardiomediastinal cardiomegaly cardiopulmonary carina catheter \
central cervical change changes chest chronic clavicle clear collapse compared comparison concerning congestion \
congestive consistent consolidation contour contours costophrenic cm degenerative dense density describe \
diaphragm diffuse discoid disease distal effusion effusions elevated elevation emphysema enlarged enlargement \
endotracheal esophageal evaluation evidence exam examination expected extensive failure fibrosis film finding \
findings fissure fluid focal for fracture from frontal gastric granuloma heart hemidiaphragm hernia hiatal hilar \
hila hyperinflated hyperinflation identified impression improved in increased infection infiltrate interstitial \
interval intact is it jugular junction large last lateral left line lines lingula lobe lobes low lower lung \
lungs markings mass mediastinal mediastinum mid middle mild mildly minimal moderate moderately multifocal \
new no nodular nodule normal normality not obscured obtained of on opacification opacities opacity or osseous \
overt pa pacemaker parenchymal partially patchy perihilar picc placement pleural pneumonia pneumothorax portable \
position positioned possible posterior prior process prominence prominent pulmonary radiograph radiographs \
radiologist recommended redemonstrated region remains removal removed residual resolved right rounded scarring \
seen severe severely shadow side silhouette size slight slightly small spine stable standard status sternotomy \
structures study subcutaneous subsegmental superior suggest suggestive svc the there these this thoracic tip \
to top trachea tube unchanged underlying unremarkable upper vascular vasculature venous view views volume \
volumes was week were widened wires with within without worse worsened worsening yesterday zone \
a an limits made internal terminates 3 4 5 . , ; \
adjacent airways apparent artifact azygos bulla cavitation cyst deformity diameter drain edema enteric \
granulomatous healed hyperlucency kyphosis lucency lymph margin metallic monitoring multiple nasogastric \
obscuring obstruction overlying peribronchial projecting pseudoaneurysm rib ribs sclerotic segment shift \
shoulder soft suture thickening tissue tortuous trace valve";

const SIZE: [&str; 3] = ["small", "moderate", "large"];
const SEVERITY: [&str; 3] = ["mild", "moderate", "severe"];
const ADVERB: [&str; 3] = ["mildly", "moderately", "severely"];
const SIDE: [&str; 2] = ["left", "right"];
const LOBE: [&str; 3] = ["upper", "middle", "lower"];
const TEXTURE: [&str; 3] = ["patchy", "focal", "dense"];
const TREND: [&str; 3] = ["unchanged", "improved", "worsened"];

const OPENERS: [&str; 6] = [
    "pa and lateral views of the chest were obtained .",
    "portable frontal view of the chest was obtained .",
    "comparison is made to the prior radiograph from yesterday .",
    "comparison is made to the prior study from last week .",
    "the exam is compared to the prior radiograph .",
    "frontal and lateral radiographs of the chest .",
];

const FILLERS: [&str; 6] = [
    "the mediastinal and hilar contours are unchanged .",
    "osseous structures are intact .",
    "there is no acute osseous abnormality .",
    "the cardiomediastinal silhouette is stable .",
    "the aortic arch is calcified .",
    "degenerative changes of the thoracic spine are seen .",
];

fn pick<'a, R: Rng>(rng: &mut R, xs: &[&'a str]) -> &'a str {
    xs[rng.gen_range(0..xs.len())]
}

/// One clinical finding: the sentence for the report body and, when
/// abnormal, its impression phrase.
struct Finding {
    sentence: String,
    impression: Option<String>,
}

fn heart<R: Rng>(rng: &mut R, abnormal: bool) -> Finding {
    if abnormal {
        let k = rng.gen_range(0..3);
        Finding {
            sentence: format!("the heart is {} enlarged .", ADVERB[k]),
            impression: Some(format!("{} cardiomegaly .", SEVERITY[k])),
        }
    } else {
        let s = pick(
            rng,
            &["heart size is normal .", "the heart size is within normal limits .", "cardiac silhouette is normal in size ."],
        );
        Finding {
            sentence: s.to_string(),
            impression: None,
        }
    }
}

fn effusion<R: Rng>(rng: &mut R, abnormal: bool) -> Finding {
    if abnormal {
        let size = pick(rng, &SIZE);
        let side = pick(rng, &["left", "right", "bilateral"]);
        Finding {
            sentence: format!("there is a {size} {side} pleural effusion ."),
            impression: Some(format!("{size} {side} pleural effusion .")),
        }
    } else {
        Finding {
            sentence: pick(rng, &["no pleural effusion is seen .", "there is no pleural effusion ."]).to_string(),
            impression: None,
        }
    }
}

fn pneumothorax<R: Rng>(rng: &mut R, abnormal: bool) -> Finding {
    if abnormal {
        let size = pick(rng, &SIZE);
        let side = pick(rng, &SIDE);
        let loc = pick(rng, &["apical", "basilar"]);
        Finding {
            sentence: format!("there is a {size} {side} {loc} pneumothorax ."),
            impression: Some(format!("{size} {side} {loc} pneumothorax .")),
        }
    } else {
        Finding {
            sentence: pick(rng, &["no pneumothorax is identified .", "there is no pneumothorax ."]).to_string(),
            impression: None,
        }
    }
}

fn consolidation<R: Rng>(rng: &mut R, abnormal: bool) -> Finding {
    if abnormal {
        let texture = pick(rng, &TEXTURE);
        let side = pick(rng, &SIDE);
        let lobe = pick(rng, &LOBE);
        Finding {
            sentence: format!("there is {texture} opacity in the {side} {lobe} lobe concerning for pneumonia ."),
            impression: Some(format!("{side} {lobe} lobe pneumonia .")),
        }
    } else {
        Finding {
            sentence: pick(rng, &["no focal consolidation is seen .", "the lungs are clear ."]).to_string(),
            impression: None,
        }
    }
}

fn edema<R: Rng>(rng: &mut R) -> Finding {
    let sev = pick(rng, &SEVERITY);
    let trend = pick(rng, &TREND);
    Finding {
        sentence: format!("{sev} pulmonary edema is {trend} ."),
        impression: Some(format!("{trend} {sev} pulmonary edema .")),
    }
}

fn atelectasis<R: Rng>(rng: &mut R) -> Finding {
    let sev = pick(rng, &["minimal", "mild"]);
    let loc = pick(rng, &["bibasilar", "left basilar", "right basilar"]);
    Finding {
        sentence: format!("there is {sev} {loc} atelectasis ."),
        impression: Some(format!("{sev} {loc} atelectasis .")),
    }
}

fn device<R: Rng>(rng: &mut R) -> Finding {
    match rng.gen_range(0..3) {
        0 => {
            let side = pick(rng, &SIDE);
            Finding {
                sentence: format!("a {side} picc line terminates in the mid svc ."),
                impression: Some(format!("{side} picc line in standard position .")),
            }
        }
        1 => {
            let cm = pick(rng, &["3", "4", "5"]);
            Finding {
                sentence: format!("an endotracheal tube terminates {cm} cm above the carina ."),
                impression: Some("endotracheal tube in standard position .".to_string()),
            }
        }
        _ => {
            let side = pick(rng, &SIDE);
            Finding {
                sentence: format!("a {side} internal jugular catheter terminates in the lower svc ."),
                impression: Some(format!("{side} internal jugular catheter in standard position .")),
            }
        }
    }
}

pub const NORMAL_IMPRESSION: &str = "no acute cardiopulmonary process .";

/// Generates one record from `rng`.
pub fn generate_record<R: Rng>(rng: &mut R, id: String) -> CorpusRecord {
    let flags = [rng.gen_bool(0.3), rng.gen_bool(0.35), rng.gen_bool(0.2), rng.gen_bool(0.3)];
    let mut findings: Vec<Finding> = vec![
        heart(rng, flags[0]),
        effusion(rng, flags[1]),
        pneumothorax(rng, flags[2]),
        consolidation(rng, flags[3]),
    ];
    if rng.gen_bool(0.25) {
        findings.push(edema(rng));
    }
    if rng.gen_bool(0.2) {
        findings.push(atelectasis(rng));
    }
    if rng.gen_bool(0.2) {
        findings.push(device(rng));
    }
    findings.shuffle(rng);
    // Keep impressions short: at most three abnormal findings survive.
    let mut abnormal = 0;
    findings.retain(|f| {
        if f.impression.is_some() {
            abnormal += 1;
            abnormal <= 3
        } else {
            true
        }
    });

    let mut body = vec![pick(rng, &OPENERS).to_string()];
    body.extend(findings.iter().map(|f| f.sentence.clone()));
    if rng.gen_bool(0.5) {
        body.push(pick(rng, &FILLERS).to_string());
    }
    let impressions: Vec<&str> = findings.iter().filter_map(|f| f.impression.as_deref()).collect();
    let impression = if impressions.is_empty() {
        NORMAL_IMPRESSION.to_string()
    } else {
        impressions.join(" ")
    };
    CorpusRecord {
        id,
        findings: body.join(" "),
        impression,
    }
}

/// `size` records from a ChaCha stream seeded with `seed`. Ids are
/// `syn-<seed>-<index>`.
pub fn generate_corpus(size: usize, seed: u64) -> Vec<CorpusRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..size)
        .map(|i| generate_record(&mut rng, format!("syn-{seed}-{i:04}")))
        .collect()
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::lm::vocab::split_words;

    #[test]
    fn seeded_and_deterministic() {
        assert_eq!(generate_corpus(20, 7), generate_corpus(20, 7));
        assert_ne!(generate_corpus(20, 7), generate_corpus(20, 8));
        assert!(generate_corpus(0, 1).is_empty());
    }

    #[test]
    fn records_are_well_formed() {
        for r in generate_corpus(200, 3) {
            assert!(!r.findings.is_empty());
            assert!(!r.impression.is_empty());
            assert!(split_words(&r.findings).len() <= 90, "{}", r.findings);
            assert!(split_words(&r.impression).len() <= 24, "{}", r.impression);
        }
    }

    #[test]
    fn generator_stays_inside_lexicon() {
        let lexicon: BTreeSet<String> = split_words(LEXICON).into_iter().collect();
        assert!(lexicon.len() >= 300, "lexicon has {} words", lexicon.len());
        for r in generate_corpus(300, 11) {
            for w in split_words(&r.findings).into_iter().chain(split_words(&r.impression)) {
                let numeric = w.chars().all(|c| c.is_ascii_digit());
                assert!(numeric || lexicon.contains(&w), "{w} missing from lexicon");
            }
        }
    }
}
