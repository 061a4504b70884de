// Keyboard shortcuts for annotation throughput: digits 1-9 toggle the
// corresponding caption, 0 toggles All Bad, Enter submits when valid.

import type { TaskForm } from "./form.js";

export type KeyAction =
    | { kind: "toggle"; position: number }
    | { kind: "all_bad" }
    | { kind: "submit" }
    | { kind: "none" };

export function actionForKey(key: string, captionCount: number): KeyAction {
    if (key === "Enter") {
        return { kind: "submit" };
    }
    if (key === "0") {
        return { kind: "all_bad" };
    }
    if (/^[1-9]$/.test(key)) {
        const position = Number(key) - 1;
        if (position < captionCount) {
            return { kind: "toggle", position };
        }
    }
    return { kind: "none" };
}

/** Apply a key to the form; returns true when the key requests a submit. */
export function applyKey(form: TaskForm, key: string): boolean {
    const action = actionForKey(key, form.captionCount);
    switch (action.kind) {
        case "toggle":
            form.toggleCaption(action.position);
            return false;
        case "all_bad":
            form.toggleAllBad();
            return false;
        case "submit":
            return form.canSubmit();
        case "none":
            return false;
    }
}
