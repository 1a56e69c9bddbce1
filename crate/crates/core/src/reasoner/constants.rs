//! Every threshold the rule table uses. All comparisons are strict unless
//! the name says `_FROM` (inclusive lower bound).

pub const BMI_FACTOR: f64 = 703.0;

pub const LOW_EXERCISE_RATIO_BELOW: f64 = 0.04;
pub const HIGH_EXERCISE_RATIO_ABOVE: f64 = 0.12;
pub const ENOUGH_SESSIONS_ABOVE: usize = 3;
pub const ENOUGH_INTENSE_RATIO_ABOVE: f64 = 0.0074;
pub const ENOUGH_MODERATE_RATIO_ABOVE: f64 = 0.0148;

pub const UNDERWEIGHT_BELOW: f64 = 18.5;
/// Normal weight is `18.5 <= bmi < 25`.
pub const NORMALWEIGHT_BELOW: f64 = 25.0;
/// Overweight is `25 <= bmi <= 29.9`; obesity is strictly above.
pub const OBESITY_ABOVE: f64 = 29.9;

pub const EFFICIENT_SLEEP_ABOVE: f64 = 84.0;

pub const OPTIMAL_SYS_BELOW: f64 = 120.0;
pub const OPTIMAL_DIA_BELOW: f64 = 80.0;
pub const DEG1_SYS_ABOVE: f64 = 140.0;
pub const DEG1_DIA_ABOVE: f64 = 90.0;
pub const DEG1_SYS_BELOW: f64 = 159.0;
pub const DEG1_DIA_BELOW: f64 = 99.0;
pub const DEG2_SYS_FROM: f64 = 160.0;
pub const DEG2_DIA_FROM: f64 = 100.0;
pub const DEG3_SYS_FROM: f64 = 180.0;
pub const DEG3_DIA_FROM: f64 = 110.0;
pub const DIAGNOSED_MEAN_SYS_ABOVE: f64 = 140.0;
pub const DIAGNOSED_MEAN_DIA_ABOVE: f64 = 90.0;

pub const HIGH_GLUCOSE_ABOVE_MG_DL: f64 = 125.0;

pub const PRODUCE_EVENTS_PER_WEEK_BELOW: f64 = 2.0;
/// Purchase categories that count as fruit, berries or vegetables.
pub const PRODUCE_CATEGORIES: &[&str] = &[
    "fruits_berries_vegetables",
    "fruit",
    "fruits",
    "berries",
    "vegetable",
    "vegetables",
];

pub const RISK_AGE_ABOVE: u32 = 64;

pub const MINUTES_PER_WEEK: f64 = 10_080.0;

pub fn is_produce(category: &str) -> bool {
    let c = category.trim().to_ascii_lowercase();
    PRODUCE_CATEGORIES.contains(&c.as_str())
}
