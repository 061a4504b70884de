// Payload shapes of the annotation service API.

export type StudyMode = "every_good" | "best_caption";

export interface TaskPayload {
    task_id: string;
    clip_id: string;
    mode: StudyMode;
    instruction: string;
    captions: string[];
    media_url: string;
    lease_expiry: number | null;
    max_captions_per_page: number;
    progress?: Progress;
}

export interface Progress {
    submitted: number;
    tasks: number;
    total_submissions: number;
}

export interface SubmitPayload {
    annotator_id: string;
    positions: number[];
    all_bad: boolean;
}

export interface SubmitResponse {
    stored: boolean;
    task_id: string;
    selection: number | number[] | "ALL_BAD";
    progress: Progress;
}

export interface ServiceError {
    error: string;
    message: string;
}
