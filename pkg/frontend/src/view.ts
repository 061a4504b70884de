// DOM rendering for one task page. Captions render in the exact order the
// task payload carries them (the task's shuffled display order); the view
// never re-sorts.

import type { TaskForm } from "./form.js";
import type { TaskPayload } from "./types.js";

export interface ViewHandlers {
    onToggleCaption(position: number): void;
    onToggleAllBad(): void;
    onSubmit(): void;
}

export function renderTask(
    root: HTMLElement,
    task: TaskPayload,
    form: TaskForm,
    mediaUrl: string,
    handlers: ViewHandlers,
): void {
    root.replaceChildren();

    const instruction = document.createElement("p");
    instruction.className = "instruction";
    instruction.textContent = task.instruction;
    root.appendChild(instruction);

    const media = document.createElement("img");
    media.className = "clip-preview";
    media.src = mediaUrl;
    media.alt = `preview of clip ${task.clip_id}`;
    root.appendChild(media);

    const list = document.createElement("ol");
    list.className = "captions";
    task.captions.forEach((text, position) => {
        const item = document.createElement("li");
        const label = document.createElement("label");
        const input = document.createElement("input");
        input.type = task.mode === "best_caption" ? "radio" : "checkbox";
        input.name = "caption";
        input.value = String(position);
        input.checked = form.isSelected(position);
        input.addEventListener("change", () => handlers.onToggleCaption(position));
        const span = document.createElement("span");
        span.textContent = ` [${position + 1}] ${text}`;
        label.appendChild(input);
        label.appendChild(span);
        item.appendChild(label);
        list.appendChild(item);
    });
    root.appendChild(list);

    const allBadLabel = document.createElement("label");
    allBadLabel.className = "all-bad";
    const allBad = document.createElement("input");
    allBad.type = "checkbox";
    allBad.checked = form.isAllBad();
    allBad.addEventListener("change", () => handlers.onToggleAllBad());
    const allBadText = document.createElement("span");
    allBadText.textContent = " [0] All Bad";
    allBadLabel.appendChild(allBad);
    allBadLabel.appendChild(allBadText);
    root.appendChild(allBadLabel);

    const submit = document.createElement("button");
    submit.className = "submit";
    submit.textContent = "Submit (Enter)";
    submit.disabled = !form.canSubmit();
    submit.addEventListener("click", () => handlers.onSubmit());
    root.appendChild(submit);

    if (task.progress) {
        const progress = document.createElement("p");
        progress.className = "progress";
        progress.textContent =
            `${task.progress.submitted} submitted this session; ` +
            `${task.progress.tasks} tasks in the pool`;
        root.appendChild(progress);
    }
}

export function renderBanner(root: HTMLElement, kind: string, message: string,
                             actionLabel?: string, onAction?: () => void): void {
    const banner = document.createElement("div");
    banner.className = `banner banner-${kind}`;
    const text = document.createElement("span");
    text.textContent = message;
    banner.appendChild(text);
    if (actionLabel && onAction) {
        const button = document.createElement("button");
        button.textContent = actionLabel;
        button.addEventListener("click", onAction);
        banner.appendChild(button);
    }
    root.prepend(banner);
}
