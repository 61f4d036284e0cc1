// Operator-facing labels: the six observed-behavior categories, the five
// strategies, and the behavior -> strategy pairing shown as button
// sub-labels so the console teaches the mapping.

export const STRATEGIES = [
  "breathing_exercise",
  "physical_touch",
  "positive_reinforcement",
  "emotion_validation",
  "refocus",
] as const;

export const STRATEGY_LABELS: Record<string, string> = {
  breathing_exercise: "Breathing exercises",
  physical_touch: "Physical touch",
  positive_reinforcement: "Encourage positive reinforcement",
  emotion_validation: "Emotion validation",
  refocus: "Refocus",
  standby: "Standby mode",
};

export const BEHAVIOR_CODES = [
  "negative_stressful_interaction",
  "negative_stressful_physical_interaction",
  "child_obstacle_or_progress",
  "negative_thoughts_or_regulation_difficulty",
  "child_cannot_focus",
  "no_stress",
] as const;

export const BEHAVIOR_CODE_LABELS: Record<string, string> = {
  negative_stressful_interaction:
    "Negative and stressful interactions within parent-child dyads",
  negative_stressful_physical_interaction:
    "Negative and stressful physical interactions within parent-child dyads",
  child_obstacle_or_progress: "The child encounters obstacles or makes progress",
  negative_thoughts_or_regulation_difficulty:
    "The parent or child expresses negative thoughts or the parent faces challenges " +
    "in regulating their own stress or that of their child",
  child_cannot_focus: "The child cannot focus on the task",
  no_stress: "No stress or negative emotion in the dyad",
};

export const CODE_TO_STRATEGY: Record<string, string> = {
  negative_stressful_interaction: "breathing_exercise",
  negative_stressful_physical_interaction: "physical_touch",
  child_obstacle_or_progress: "positive_reinforcement",
  negative_thoughts_or_regulation_difficulty: "emotion_validation",
  child_cannot_focus: "refocus",
  no_stress: "standby",
};

export const PHASE_ORDER = ["setup", "session1", "break", "session2", "debrief"] as const;
