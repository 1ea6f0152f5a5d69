"""Prompt templates for every agent call in a consultation."""

from __future__ import annotations

from typing import Sequence

ATTENDING_SYSTEM = (
    "You are a highly experienced physician. You will be provided with a complex clinical case "
    "that may involve atypical presentations or rare conditions. Carefully review the patient's "
    "symptoms, history, and any other relevant information."
)

DIAGNOSIS_TASK = (
    "Based on the symptoms of the patient, list the diagnosis separately at the end in the following format:\n"
    "DIAGNOSIS:\n"
    "1. <Diagnosis 1>\n"
    "2. <Diagnosis 2>\n"
    "3. <Diagnosis 3>\n"
    "...\n"
    "10. <Diagnosis 10>"
)

TREATMENT_TASK = (
    "Based on the diagnosis and procedures provided, please give the most appropriate combination of "
    "medications. Select medications only from the given list. List each medication on a separate line "
    "using the following format:\n"
    "TREATMENT:\n"
    "1. <Medication 1>\n"
    "2. <Medication 2>\n"
    "3. <Medication 3>\n"
    "...\n"
    "Only include medications from the provided list."
)


def task_prompt(task: str) -> str:
    return DIAGNOSIS_TASK if task == "diagnosis" else TREATMENT_TASK


def candidate_list(names: Sequence[str]) -> str:
    return "Candidate medications: " + ", ".join(names) + "."


def mdt_formation(profile: str, roster: Sequence[tuple[str, str]]) -> str:
    depts = "\n".join(f"- {name}: {desc}" for name, desc in roster)
    return (
        f"Patient information:\n{profile}\n\n"
        f"Available specialist departments:\n{depts}\n\n"
        "Select the specialists whose expertise is relevant to this patient to form a "
        "multi-disciplinary team. Reply with the department names separated by commas."
    )


def specialist_opening(profile: str, task: str, memory_text: str, tool_text: str, extra: str = "") -> str:
    parts = [f"Patient information:\n{profile}"]
    if extra:
        parts.append(extra)
    if memory_text:
        parts.append(memory_text)
    if tool_text:
        parts.append(tool_text)
    goal = "diagnosis" if task == "diagnosis" else "medication treatment"
    parts.append(f"Give your expert opinion on the most likely {goal} for this patient from the perspective of your specialty.")
    return "\n\n".join(parts)


def specialist_followup(feedback: Sequence[tuple[str, str]], memory_text: str, tool_text: str) -> str:
    items = "\n".join(f"- {src}: {text}" for src, text in feedback)
    parts = [f"Feedback from the multi-disciplinary team on your previous opinion:\n{items}"]
    if memory_text:
        parts.append(memory_text)
    if tool_text:
        parts.append(tool_text)
    parts.append("Revise your opinion taking this feedback into account.")
    return "\n\n".join(parts)


def meeting_review(speaker: str, profile: str, opinion: str) -> str:
    return (
        f"Patient information:\n{profile}\n\n"
        f"The {speaker} specialist shared this opinion with the team:\n{opinion}\n\n"
        "If you agree, reply with AGREE on the first line. Otherwise reply with a first line "
        "starting with 'REVISE:' followed by the changes you recommend."
    )


def summary_request(profile: str, opinions: Sequence[tuple[int, str, str]]) -> str:
    body = "\n\n".join(f"[Round {r + 1}] {dept}: {text}" for r, dept, text in opinions)
    return (
        f"Patient information:\n{profile}\n\n"
        f"Opinions from the multi-disciplinary team:\n{body}\n\n"
        "Summarize the team's discussion into a final discussion report."
    )


def final_decision(profile: str, report: str, memory_text: str, tool_text: str, task: str, extra: str = "") -> str:
    """Final attending prompt; sections appear as profile, report, memory, tools."""
    parts = [f"Patient information:\n{profile}"]
    if extra:
        parts.append(extra)
    if report:
        parts.append(f"Discussion report from the multi-disciplinary team:\n{report}")
    if memory_text:
        parts.append(memory_text)
    if tool_text:
        parts.append(tool_text)
    parts.append(task_prompt(task))
    return "\n\n".join(parts)
