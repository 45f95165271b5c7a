"""Prompt templates for generation, rewriting and judging.

Templates are used verbatim; only the ``{query}`` / ``{passage}`` placeholders
are substituted (with ``str.replace`` so braces inside passages survive).
"""

THINK_CLOSE = "</think>"

ANSWER_INSTRUCTION = "Put your final answer within \\boxed{}."

GENERATION_TEMPLATE = (
    "Solve the following math problem. " + ANSWER_INSTRUCTION + "\n\n{query}"
)

REWRITE_TEMPLATE = """### Instruction
You are a skilled editor tasked with improving a given thinking passage. Your goal is to refine the passage to enhance its overall quality, making it more organized, coherent, and accurate. Your output should be a rewritten version of the original thinking passage. The rewritten version should maintain the core ideas and essence of the original while significantly improving its presentation and impact. Note that:

1. Always use a first-person tone when refining.
2. This is more like thinking out loud than proper writing. Use simple and everyday language.
3. It's okay, and even good, to use sentences of reflecting, pausing to think, or connecting different thoughts. But if such verbose sentences bring no significant new ideas, you may simplify or remove them for clarity.
4. Stick to the format and language style of the original.
Please provide only the rewritten thinking passage, without any additional explanations or context.

### Thinking Passage to Rewrite
{passage}"""

JUDGE_TEMPLATE = """### Instruction
You are an impartial judge evaluating the overall quality of a piece of thinking texts. Your task is to assess the provided texts considering the following flaws.

1.  **Over-Thinking**: The passage exhibits excessive thinking on simple or straightforward concepts.
2.  **Under-Thinking**: The passage lacks sufficient depth, complexity, or thoroughness in addressing significant and challenging aspects.
3.  **Disordered-Thinking**: The flow of thought is illogical and inconsistent, or interleaves multiple unrelated topics, making it difficult to follow.
4.  **Redundant-Thinking**: The passage repeats ideas or insights unnecessarily without adding significant new value or perspective.

For each flaw, assign a score from 1 to 5, where 1 indicates the flaw is significantly present (worst) and 5 indicates the flaw is perfectly avoided (best). After evaluating each aspect, provide an overall judgment of the passage's quality, also on a 1-5 scale. Your output must strictly adhere to the following format, where `[Your judgment]' is a single numerical digit (1, 2, 3, 4, or 5):

```
Aspect 1: [Your judgment]
Aspect 2: [Your judgment]
Aspect 3: [Your judgment]
Aspect 4: [Your judgment]
Overall: [Your judgment]
```

Please provide only the formatted judgment, without any additional explanations or context outside of the specified format.

### Thinking Passage to Judge
{passage}"""


def generation_prompt(query: str) -> str:
    return GENERATION_TEMPLATE.replace("{query}", query)


def rewrite_prompt(passage: str) -> str:
    return REWRITE_TEMPLATE.replace("{passage}", passage)


def judge_prompt(passage: str) -> str:
    return JUDGE_TEMPLATE.replace("{passage}", passage)
