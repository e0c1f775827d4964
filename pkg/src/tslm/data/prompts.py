"""Prompt text: model-input prompts per task and the rationale-generation templates."""

ANSWER_SUFFIX = (
    '- Please now write your rationale. Make sure that your last word is the answer. '
    'You MUST end your response with "Answer:"'
)

TREND_PRE = "Trend?\n"
TREND_POST = "\nascending, descending or flat?\n"

HAR_PRE = """You are given accelerometer data in all three dimensions. Your task is to classify the activity based on analysis of the data.

Instructions:
- Begin by analyzing the time series without assuming a specific label.
- Think step-by-step about what the observed patterns suggest regarding movement intensity and behavior.
- Write your rationale as a single, natural paragraph, do not use bullet points, numbered steps, or section headings.
- Do **not** mention any class label until the final sentence.

"""

HAR_POST = "\nPossible activity labels are:\n{labels}.\n" + ANSWER_SUFFIX

SLEEP_PRE = """You are given a 30-second EEG time series segment. Your task is to classify the sleep stage based on analysis of the data.

Instructions:
- Analyze the data objectively without presuming a particular label.
- Reason carefully and methodically about what the signal patterns suggest regarding sleep stage.
- Write your reasoning as a single, coherent paragraph.
- Only reveal the correct class at the very end.
- Never state that you are uncertain or unable to classify the data. You must always provide a rationale and a final answer.

"""

SLEEP_POST = "\nPossible sleep stages are:\n{labels}\n\n" + ANSWER_SUFFIX

ECG_PRE = """You are given a 12-lead ECG recording showing all standard leads (I, II, III, aVR, aVL, aVF, V1, V2, V3, V4, V5, V6).

Clinical Context: {context}

Question: {question}

Instructions:
- Analyze the ECG systematically without presuming a particular answer.
- Consider rhythm, rate, morphology, intervals, and any abnormalities you observe across all 12 leads.
- Write your reasoning as a single, coherent paragraph.

"""

ECG_POST = "\nPossible answers are:\n- {opt1}\n- {opt2}\n\n" + ANSWER_SUFFIX

SIM_PRE = "You are given different time series. All have the same length of {length} data points."
SIM_POST = "Predict the pattern of the time series. Answer:"
SIM_ANSWER = "This is a random pattern."
SIM_DESC = "This is a time series with mean {mean:.4f} and std {std:.4f}."

# Rationale-generation prompts for an external LLM, kept verbatim (including line wraps).
HAR_RATIONALE_TEMPLATE = 'You are shown a time-series plot of accelerometer over a 2.56 second window. \nThis data corresponds to one of two possible activities:\n[CORRECT_ACTIVITY]\n[DISSIMILAR_ACTIVITY]\n\nYour task is to classify the activity based on analysis of the data.\n\nInstructions:\n- Begin by analyzing the time series without assuming a specific label.\n- Think step-by-step about what the observed patterns suggest regarding movement intensity and behavior.\n- Write your rationale as a single, natural paragraph, do not use bullet \n  points, numbered steps, or section headings.\n- Do not refer back to the plot or to the act of visual analysis in your  rationale; the plot is only for reference but you should reason about the \n  time-series data.\n- Do **not** assume any answer at the beginning,  analyze as if you do not \n  yet know which class is correct.\n- Do **not** mention either class label until the final sentence.\n- Make sure that your last word is the answer. You MUST end your response \n  with "Answer: [CORRECT_ACTIVITY]":'

SLEEP_RATIONALE_TEMPLATE = 'You are presented with a time-series plot showing EEG data collected over a 30-second interval. This signal corresponds to one of two possible sleep stages:\n- [SLEEP_STAGE_1]\n- [SLEEP_STAGE_2]\n\nYour task is to determine the correct sleep stage based solely on the observed patterns in the time series.\n\nInstructions:\n- Analyze the data objectively without presuming a particular label.\n- Reason carefully and methodically about what the signal patterns suggest \n  regarding sleep stage.\n- Write your reasoning as a single, coherent paragraph. Do not use bullet points, lists, or section headers.\n- Do not reference the plot, visuals, or the process of viewing the data in your explanation; focus only on the characteristics of the time series.\n- Do not mention or speculate about either class during the rationale, only reveal the correct class at the very end.\n- Never state that you are uncertain or unable to classify the data. You must always provide a rationale and a final answer.\n- Your final sentence must conclude with: "Answer: [CORRECT_SLEEP_STAGE]"'

ECG_RATIONALE_TEMPLATE = 'You are presented with a complete 12-lead ECG recording showing all standard leads (I, II, III, aVR, aVL, aVF, V1, V2, V3, V4, V5, V6).\n\nClinical Context: [CLINICAL_CONTEXT]\n\nQuestion: [QUESTION]\n\nThis question has one of two possible answers:\n- [ANSWER_OPTION_1]\n- [ANSWER_OPTION_2]\n\nYour task is to analyze the ECG and determine the correct answer based on the observed cardiac patterns. You may include the clinical context in your analysis if it helps you determine the correct answer.\n\nInstructions:\n- Analyze the ECG systematically without presuming a particular answer.\n- Consider rhythm, rate, morphology, intervals, and any abnormalities you observe across all 12 leads.\n- Think step-by-step about what the ECG patterns indicate regarding the clinical question above.\n- Write your reasoning as a single, coherent paragraph. Do not use bullet points, lists, or section headers.\n- Do not reference the visual aspects of viewing the ECG plot; focus on the cardiac characteristics and clinical significance.\n- Do not mention or assume either answer option during your rationale, only reveal the correct answer at the very end.\n- NEVER state uncertainty or inability to determine the answer. You MUST always provide clinical reasoning and a definitive answer.\n- Your final sentence must conclude with: "Answer: [CORRECT_ANSWER]"'

CAPTION_TEMPLATE = "Generate a detailed caption for the following time-series data:"
