//! Slot vocabularies for the synthetic notes and the gazetteer derived from them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{Gazetteer, SemanticType};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub surface: String,
    pub semantic_type: SemanticType,
}

fn terms(ty: SemanticType, surfaces: &[&str]) -> Vec<Term> {
    surfaces
        .iter()
        .map(|s| Term {
            surface: s.to_string(),
            semantic_type: ty,
        })
        .collect()
}

/// Everything the note generator draws from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    pub medications: Vec<Term>,
    /// Conditions a treatment can be given for.
    pub conditions: Vec<Term>,
    /// Symptoms a treatment can cause, worsen or relieve.
    pub symptoms: Vec<Term>,
    pub procedures: Vec<Term>,
    pub dose_amounts: Vec<u32>,
    pub dose_units: Vec<String>,
    pub sigs: Vec<String>,
    /// Entities that only ever appear in distractor sentences.
    pub background: Vec<Term>,
    pub weights_kg: Vec<u32>,
}

impl Lexicon {
    pub fn clinical() -> Self {
        use SemanticType::*;
        let medications = terms(
            Clnd,
            &[
                "aspirin", "metformin", "lisinopril", "atorvastatin", "metoprolol", "amlodipine", "omeprazole",
                "simvastatin", "losartan", "albuterol", "gabapentin", "hydrochlorothiazide", "sertraline",
                "furosemide", "acetaminophen", "ibuprofen", "prednisone", "warfarin", "levothyroxine",
                "amoxicillin", "azithromycin", "ciprofloxacin", "vancomycin", "heparin", "morphine", "oxycodone",
                "tramadol", "clopidogrel", "pantoprazole", "famotidine", "ondansetron", "lorazepam", "citalopram",
                "carvedilol", "digoxin", "spironolactone", "allopurinol", "montelukast", "doxycycline",
                "cephalexin", "enoxaparin", "labetalol", "nitroglycerin", "insulin glargine", "potassium chloride",
                "magnesium oxide", "tamsulosin", "finasteride", "trazodone", "quetiapine", "haloperidol",
                "diltiazem", "verapamil", "hydralazine", "clonidine", "nifedipine", "rosuvastatin", "glipizide",
                "sitagliptin", "apixaban", "rivaroxaban", "dexamethasone", "methylprednisolone", "fluticasone",
                "cetirizine", "loratadine", "docusate", "senna", "bisacodyl", "lactulose", "nystatin",
                "fluconazole", "acyclovir", "valacyclovir", "oseltamivir", "linezolid", "meropenem",
                "ceftriaxone", "piperacillin tazobactam", "metronidazole",
            ],
        );
        let mut conditions = terms(
            Fndg,
            &[
                "hypertension", "diabetes", "atrial fibrillation", "hyperlipidemia", "heart failure",
                "hypothyroidism", "depression", "anxiety", "insomnia", "gout", "asthma", "copd", "pneumonia",
                "urinary tract infection", "cellulitis", "acid reflux", "anemia", "chronic kidney disease",
                "deep vein thrombosis", "pulmonary embolism", "sepsis", "bronchitis", "osteoarthritis",
                "benign prostatic hyperplasia", "seasonal allergies", "constipation", "psychosis", "angina",
                "coronary artery disease", "hypokalemia", "hypomagnesemia", "influenza", "shingles",
            ],
        );
        conditions.extend(terms(Acab, &["gastric ulcer", "pressure ulcer", "abscess"]));
        conditions.extend(terms(Inpo, &["hip fracture", "wrist fracture", "concussion", "burn injury"]));
        conditions.extend(terms(Anab, &["inguinal hernia", "gallstones", "kidney stone"]));
        let symptoms = terms(
            Sosy,
            &[
                "headache", "nausea", "dizziness", "cough", "rash", "fatigue", "shortness of breath",
                "chest pain", "back pain", "abdominal pain", "diarrhea", "vomiting", "itching", "swelling",
                "palpitations", "confusion", "drowsiness", "dry mouth", "muscle aches", "joint pain", "fever",
                "chills", "blurred vision", "tremor", "wheezing", "leg cramps", "heartburn", "bruising",
            ],
        );
        let mut procedures = terms(
            Diap,
            &[
                "chest x ray", "ct scan", "mri", "echocardiogram", "ekg", "colonoscopy", "endoscopy",
                "abdominal ultrasound", "stress test", "bronchoscopy",
            ],
        );
        procedures.extend(terms(
            Lbpr,
            &["blood culture", "urinalysis", "lipid panel", "liver biopsy", "lumbar puncture"],
        ));
        procedures.extend(terms(
            Topp,
            &[
                "physical therapy", "dialysis", "appendectomy", "cardiac catheterization", "knee replacement",
                "blood transfusion", "radiation therapy", "wound debridement", "cholecystectomy",
                "hernia repair", "oxygen therapy", "cardioversion", "nebulizer treatment", "splinting",
                "incision and drainage",
            ],
        ));
        let mut background = terms(Bpoc, &["abdomen", "left arm", "right leg", "lungs", "neck", "chest wall"]);
        background.extend(terms(Aggp, &["elderly woman", "adult male", "adolescent"]));
        background.extend(terms(Anst, &["oropharynx", "abdominal wall", "skin"]));
        background.extend(terms(Phob, &["cane", "walker", "wheelchair", "hearing aid"]));
        background.extend(terms(Evnt, &["fall at home", "car accident", "admission"]));
        background.extend(terms(Sbst, &["tobacco", "alcohol", "caffeine"]));
        background.extend(terms(Lbtr, &["elevated troponin", "low sodium", "normal white count"]));
        background.extend(terms(Cgab, &["congenital heart disease", "cleft palate"]));
        background.extend(terms(Emod, &["animal model"]));

        Lexicon {
            medications,
            conditions,
            symptoms,
            procedures,
            dose_amounts: vec![1, 2, 5, 10, 12, 20, 25, 40, 50, 75, 80, 100, 125, 200, 250, 325, 400, 500, 650, 1000],
            dose_units: vec!["mg".into(), "mcg".into(), "units".into()],
            sigs: [
                "once daily", "twice daily", "three times a day", "every six hours", "at bedtime", "as needed",
                "every morning", "every other day", "weekly", "with meals",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            background,
            weights_kg: vec![48, 55, 62, 70, 81, 95, 110],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let slots: [(&str, usize); 8] = [
            ("medications", self.medications.len()),
            ("conditions", self.conditions.len()),
            ("symptoms", self.symptoms.len()),
            ("procedures", self.procedures.len()),
            ("dose_amounts", self.dose_amounts.len()),
            ("dose_units", self.dose_units.len()),
            ("sigs", self.sigs.len()),
            ("background", self.background.len()),
        ];
        for (name, n) in slots {
            if n == 0 {
                return Err(Error::Config(format!("slot vocabulary `{name}` is empty")));
            }
        }
        Ok(())
    }

    pub fn dose_surfaces(&self) -> impl Iterator<Item = String> + '_ {
        self.dose_amounts
            .iter()
            .flat_map(move |a| self.dose_units.iter().map(move |u| format!("{a} {u}")))
    }

    /// Every surface form the generator can emit, typed.
    pub fn gazetteer(&self) -> Result<Gazetteer> {
        let mut g = Gazetteer::new();
        for t in self
            .medications
            .iter()
            .chain(&self.conditions)
            .chain(&self.symptoms)
            .chain(&self.procedures)
            .chain(&self.background)
        {
            g.insert(&t.surface, t.semantic_type)?;
        }
        for d in self.dose_surfaces() {
            g.insert(&d, SemanticType::Qnco)?;
        }
        for w in &self.weights_kg {
            g.insert(&format!("{w} kg"), SemanticType::Qnco)?;
        }
        Ok(g)
    }
}

/// Draws an index in `0..n` with probability proportional to `1/(i+1)^s`,
/// giving a long tail of rare entries when `s > 0`.
pub fn zipf_index<R: Rng + ?Sized>(rng: &mut R, n: usize, s: f64) -> usize {
    let weights: Vec<f64> = (0..n).map(|i| 1.0 / ((i + 1) as f64).powf(s)).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    n - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn meets_minimum_sizes_and_builds_gazetteer() {
        let lex = Lexicon::clinical();
        assert!(lex.medications.len() >= 30);
        assert!(lex.conditions.len() + lex.symptoms.len() >= 20);
        assert!(lex.procedures.len() >= 15);
        lex.validate().unwrap();
        let g = lex.gazetteer().unwrap();
        assert_eq!(g.lookup("40 mg"), Some(SemanticType::Qnco));
        assert_eq!(g.lookup("chest x ray"), Some(SemanticType::Diap));
        assert_eq!(g.lookup("Insulin Glargine"), Some(SemanticType::Clnd));
    }

    #[test]
    fn empty_slot_is_config_error() {
        let mut lex = Lexicon::clinical();
        lex.sigs.clear();
        assert!(matches!(lex.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn zipf_prefers_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0usize; 10];
        for _ in 0..5000 {
            counts[zipf_index(&mut rng, 10, 1.0)] += 1;
        }
        assert!(counts[0] > counts[9] * 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert!(zipf_index(&mut rng, 3, 0.0) < 3);
        }
    }
}
