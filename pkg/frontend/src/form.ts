// Form state for one annotation task. The rules here mirror the service's
// validation exactly, so no state this form can submit is ever rejected for
// mode-validity reasons: selections and All Bad are mutually exclusive,
// best_caption holds at most one selection, and an empty form cannot submit.

import type { StudyMode, SubmitPayload } from "./types.js";

export class TaskForm {
    readonly mode: StudyMode;
    readonly captionCount: number;
    private selected: Set<number> = new Set();
    private allBad = false;

    constructor(mode: StudyMode, captionCount: number) {
        if (captionCount < 1) {
            throw new Error("task must carry at least one caption");
        }
        this.mode = mode;
        this.captionCount = captionCount;
    }

    isSelected(position: number): boolean {
        return this.selected.has(position);
    }

    isAllBad(): boolean {
        return this.allBad;
    }

    selections(): number[] {
        return [...this.selected].sort((a, b) => a - b);
    }

    /** Toggle one caption; selecting anything clears All Bad. */
    toggleCaption(position: number): void {
        if (position < 0 || position >= this.captionCount) {
            return;
        }
        if (this.selected.has(position)) {
            this.selected.delete(position);
            return;
        }
        if (this.mode === "best_caption") {
            this.selected.clear(); // radio semantics
        }
        this.selected.add(position);
        this.allBad = false;
    }

    /** Toggle All Bad; turning it on clears every selection. */
    toggleAllBad(): void {
        this.allBad = !this.allBad;
        if (this.allBad) {
            this.selected.clear();
        }
    }

    /** A submittable form has either All Bad or a valid selection. */
    canSubmit(): boolean {
        if (this.allBad) {
            return this.selected.size === 0;
        }
        if (this.mode === "best_caption") {
            return this.selected.size === 1;
        }
        return this.selected.size > 0;
    }

    toPayload(annotatorId: string): SubmitPayload {
        if (!this.canSubmit()) {
            throw new Error("form state is not submittable");
        }
        return {
            annotator_id: annotatorId,
            positions: this.selections(),
            all_bad: this.allBad,
        };
    }

    reset(): void {
        this.selected.clear();
        this.allBad = false;
    }
}

/** Every submittable form state for a task, as payloads (test support). */
export function enumerateSubmittableStates(
    mode: StudyMode,
    captionCount: number,
    annotatorId: string,
): SubmitPayload[] {
    const payloads: SubmitPayload[] = [];
    if (mode === "best_caption") {
        for (let i = 0; i < captionCount; i++) {
            payloads.push({ annotator_id: annotatorId, positions: [i], all_bad: false });
        }
    } else {
        for (let mask = 1; mask < 1 << captionCount; mask++) {
            const positions: number[] = [];
            for (let i = 0; i < captionCount; i++) {
                if (mask & (1 << i)) positions.push(i);
            }
            payloads.push({ annotator_id: annotatorId, positions, all_bad: false });
        }
    }
    payloads.push({ annotator_id: annotatorId, positions: [], all_bad: true });
    return payloads;
}
